"""Fixed-topology network kernel: dense, ReLU, max-pool, dropout, Adam, checkpoints.

Every op works on plain numpy arrays and keeps the dtype of its inputs, so the
same code runs at float32 for training and float64 for gradient checks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np


class ShapeError(ValueError):
    pass


def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.shape[-1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ShapeError(f"dense: x{x.shape} W{W.shape} b{b.shape}")
    return x @ W + b


def dense_backward(x: np.ndarray, W: np.ndarray, dy: np.ndarray):
    """Returns ``(dx, dW, db)`` for ``y = x W + b``."""
    if x.shape[0] != dy.shape[0] or x.shape[1] != W.shape[0] or dy.shape[1] != W.shape[1]:
        raise ShapeError(f"dense backward: x{x.shape} W{W.shape} dy{dy.shape}")
    return dy @ W.T, x.T @ dy, dy.sum(axis=0)


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def maxpool_points(features: np.ndarray):
    """Column-wise max over the point axis (``-2``); ties go to the lowest row.

    Accepts ``(N, C)`` or batched ``(B, N, C)``.
    """
    if features.shape[-2] < 1:
        raise ShapeError("max-pool over zero points")
    argmax = np.argmax(features, axis=-2)
    pooled = np.take_along_axis(features, argmax[..., None, :], axis=-2)[..., 0, :]
    return pooled, argmax


def maxpool_backward(argmax: np.ndarray, dy: np.ndarray, n_rows: int) -> np.ndarray:
    shape = dy.shape[:-1] + (n_rows, dy.shape[-1])
    out = np.zeros(shape, dtype=dy.dtype)
    np.put_along_axis(out, argmax[..., None, :], dy[..., None, :], axis=-2)
    return out


def dropout_forward(x: np.ndarray, p_drop: float, rng: np.random.Generator | None, training: bool):
    """Inverted dropout. Returns ``(y, mask)`` where ``mask`` already holds the survivor scale."""
    if not 0 <= p_drop < 1:
        raise ValueError("p_drop must be in [0, 1)")
    if not training or p_drop == 0:
        return x, np.ones_like(x)
    keep = rng.random(x.shape) >= p_drop
    mask = keep.astype(x.dtype) / x.dtype.type(1 - p_drop)
    return x * mask, mask


def dropout_backward(mask: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * mask


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    dW: np.ndarray = field(init=False)
    db: np.ndarray = field(init=False)
    mW: np.ndarray = field(init=False)
    vW: np.ndarray = field(init=False)
    mb: np.ndarray = field(init=False)
    vb: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        for slot in ("dW", "mW", "vW"):
            setattr(self, slot, np.zeros_like(self.W))
        for slot in ("db", "mb", "vb"):
            setattr(self, slot, np.zeros_like(self.b))


class ParamStore:
    """Ordered map of layer name to :class:`Layer` with gradient and Adam slots."""

    def __init__(self, layers: dict[str, Layer] | None = None):
        self.layers: dict[str, Layer] = dict(layers or {})

    def __getitem__(self, name: str) -> Layer:
        return self.layers[name]

    def __contains__(self, name: str) -> bool:
        return name in self.layers

    def __iter__(self) -> Iterator[str]:
        return iter(self.layers)

    def add(self, name: str, W: np.ndarray, b: np.ndarray) -> None:
        if name in self.layers:
            raise KeyError(f"duplicate layer {name!r}")
        self.layers[name] = Layer(W, b)

    def zero_grad(self) -> None:
        for layer in self.layers.values():
            layer.dW[...] = 0
            layer.db[...] = 0

    def shapes(self) -> dict[str, tuple[tuple[int, ...], tuple[int, ...]]]:
        return {k: (v.W.shape, v.b.shape) for k, v in self.layers.items()}

    def arrays(self, slots: tuple[str, ...] = ("W", "b")) -> Iterator[tuple[str, np.ndarray]]:
        for name, layer in self.layers.items():
            for slot in slots:
                yield f"{name}.{slot}", getattr(layer, slot)

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for name, layer in self.layers.items():
            out.add(name, layer.W.astype(dtype), layer.b.astype(dtype))
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, layer in self.layers.items():
            out.add(name, layer.W.copy(), layer.b.copy())
            new = out.layers[name]
            for slot in ("dW", "db", "mW", "vW", "mb", "vb"):
                getattr(new, slot)[...] = getattr(layer, slot)
        return out


def init_params(
    layer_sizes: list[tuple[str, int, int]],
    rng: np.random.Generator,
    dtype=np.float32,
) -> ParamStore:
    """He-uniform weights (bound ``sqrt(6 / fan_in)``) and zero biases."""
    store = ParamStore()
    for name, fan_in, fan_out in layer_sizes:
        bound = math.sqrt(6.0 / fan_in)
        W = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
        store.add(name, W, np.zeros(fan_out, dtype=dtype))
    return store


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_rate: float = 0.7
    decay_every: int = 3_000_000
    t: int = 0

    def __post_init__(self) -> None:
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")

    def effective_lr(self, t: int | None = None) -> float:
        t = self.t if t is None else t
        return self.lr * self.decay_rate ** (t // self.decay_every)


def adam_step(params: ParamStore, state: AdamState) -> None:
    """One bias-corrected Adam update on every layer; gradients are zeroed afterwards."""
    state.t += 1
    t = state.t
    lr = state.effective_lr()
    c1 = 1 - state.beta1**t
    c2 = 1 - state.beta2**t
    for layer in params.layers.values():
        for p, g, m, v in ((layer.W, layer.dW, layer.mW, layer.vW), (layer.b, layer.db, layer.mb, layer.vb)):
            m *= state.beta1
            m += (1 - state.beta1) * g
            v *= state.beta2
            v += (1 - state.beta2) * g * g
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
            g[...] = 0


_ADAM_FIELDS = ("lr", "beta1", "beta2", "eps", "decay_rate", "decay_every", "t")


def blob_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".bin")


def save_checkpoint(
    path: str | Path, params: ParamStore, state: AdamState | None = None, extra: dict[str, Any] | None = None
) -> None:
    """Write a JSON manifest at ``path`` and the little-endian float32 blob at ``path + '.bin'``.

    Blob order: every ``W``/``b`` in manifest order, then the Adam moments.
    """
    slots = ("W", "b", "mW", "mb", "vW", "vb")
    entries = []
    chunks = []
    for slot_group in (("W", "b"), ("mW", "mb"), ("vW", "vb")):
        for name, arr in params.arrays(slot_group):
            entries.append({"name": name, "shape": list(arr.shape)})
            chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    assert len(entries) == len(slots) * len(params.layers)
    manifest = {
        "format": "pcrkit-ckpt/1",
        "layers": [{"name": k, "W": list(v[0]), "b": list(v[1])} for k, v in params.shapes().items()],
        "arrays": entries,
        "adam": {k: getattr(state, k) for k in _ADAM_FIELDS} if state else None,
    }
    manifest.update(extra or {})
    path = Path(path)
    blob_path(path).write_bytes(b"".join(chunks))
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_checkpoint(path: str | Path) -> tuple[ParamStore, AdamState | None, dict[str, Any]]:
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format") != "pcrkit-ckpt/1":
        raise ValueError(f"{path}: not a pcrkit checkpoint")
    blob = blob_path(path).read_bytes()
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(np.float32)
        offset += count * 4
    if offset != len(blob):
        raise ValueError(f"{path}: blob size {len(blob)} does not match manifest ({offset})")
    params = ParamStore()
    for layer in manifest["layers"]:
        name = layer["name"]
        params.add(name, arrays[f"{name}.W"], arrays[f"{name}.b"])
        entry = params[name]
        for slot in ("mW", "mb", "vW", "vb"):
            getattr(entry, slot)[...] = arrays[f"{name}.{slot}"]
    state = AdamState(**manifest["adam"]) if manifest.get("adam") else None
    return params, state, manifest
