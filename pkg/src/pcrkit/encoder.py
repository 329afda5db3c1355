"""PointNet global feature: shared per-point MLP, ReLU after every layer, max-pool."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nncore import ParamStore, ShapeError, dense_forward, maxpool_backward, maxpool_points, relu_backward

ENCODER_WIDTHS = (64, 64, 64, 128, 1024)


def encoder_layer_names(widths) -> list[str]:
    return [f"enc{i}" for i in range(len(widths))]


def encoder_layer_sizes(widths, in_dim: int = 3) -> list[tuple[str, int, int]]:
    sizes = []
    for name, w in zip(encoder_layer_names(widths), widths):
        sizes.append((name, in_dim, w))
        in_dim = w
    return sizes


@dataclass
class EncoderCache:
    inputs: list[np.ndarray]  # per layer input, flattened to (B*N, C_in)
    pre_acts: list[np.ndarray]  # per layer pre-activation
    argmax: np.ndarray  # (B, C)
    batch_shape: tuple[int, int]  # (B, N)
    squeeze: bool


def _layer_names(params: ParamStore) -> list[str]:
    names = [n for n in params if n.startswith("enc")]
    return sorted(names, key=lambda n: int(n[3:]))


def encode(params: ParamStore, cloud: np.ndarray, dtype=None):
    """Global feature for a cloud ``(N, 3)`` or a batch ``(B, N, 3)``.

    Returns ``(feature, cache)`` with feature shape ``(C,)`` or ``(B, C)``.
    """
    names = _layer_names(params)
    dtype = dtype or params[names[0]].W.dtype
    x = np.asarray(cloud, dtype=dtype)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[-1] != 3:
        raise ShapeError(f"expected (N, 3) or (B, N, 3) cloud, got {np.shape(cloud)}")
    B, N, _ = x.shape
    if N == 0:
        raise ShapeError("cannot encode an empty cloud")

    h = x.reshape(B * N, 3)
    inputs, pre_acts = [], []
    for name in names:
        layer = params[name]
        inputs.append(h)
        z = dense_forward(h, layer.W, layer.b)
        pre_acts.append(z)
        h = np.maximum(z, 0)
    feat, argmax = maxpool_points(h.reshape(B, N, -1))
    cache = EncoderCache(inputs, pre_acts, argmax, (B, N), squeeze)
    return (feat[0] if squeeze else feat), cache


def encode_backward(params: ParamStore, cache: EncoderCache, dfeature: np.ndarray) -> np.ndarray:
    """Accumulate parameter gradients into ``params``; return the gradient wrt the cloud."""
    names = _layer_names(params)
    B, N = cache.batch_shape
    dfeat = np.asarray(dfeature)
    if cache.squeeze:
        dfeat = dfeat[None]
    if dfeat.shape != cache.argmax.shape:
        raise ShapeError(f"dfeature {np.shape(dfeature)} does not match cache {cache.argmax.shape}")
    dh = maxpool_backward(cache.argmax, dfeat.astype(cache.pre_acts[-1].dtype), N).reshape(B * N, -1)
    for i in reversed(range(len(names))):
        layer = params[names[i]]
        dz = relu_backward(cache.pre_acts[i], dh)
        layer.dW += cache.inputs[i].T @ dz
        layer.db += dz.sum(axis=0)
        dh = dz @ layer.W.T
    dcloud = dh.reshape(B, N, 3)
    return dcloud[0] if cache.squeeze else dcloud
