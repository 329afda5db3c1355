"""Single-shot and iterative PCRNet: Siamese encoder, FC pose head, pose composition.

Training unrolls the iterative loop and backpropagates through every pass,
including the rigid transform applied to the source between passes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry as geo
from .encoder import ENCODER_WIDTHS, encode, encode_backward, encoder_layer_sizes
from .nncore import (
    ParamStore,
    ShapeError,
    dense_forward,
    dropout_backward,
    dropout_forward,
    init_params,
    relu_backward,
)

SINGLE_SHOT = "single_shot"
ITERATIVE = "iterative"
VARIANTS = (SINGLE_SHOT, ITERATIVE)

DEFAULT_MAX_ITER = 20
DEFAULT_EPS = 1e-7
TRAIN_UNROLL = 8


@dataclass(frozen=True)
class ModelConfig:
    variant: str = ITERATIVE
    encoder_widths: tuple[int, ...] = ENCODER_WIDTHS
    head_widths: tuple[int, ...] = (1024, 512, 256)
    dropout: float = 0.5
    head_init_scale: float = 0.01

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        object.__setattr__(self, "head_widths", tuple(int(w) for w in self.head_widths))

    @classmethod
    def single_shot(cls, **kw) -> "ModelConfig":
        kw.setdefault("dropout", 0.0)
        kw.setdefault("head_widths", (1024, 1024, 512, 512, 256))
        return cls(variant=SINGLE_SHOT, **kw)

    @classmethod
    def iterative(cls, **kw) -> "ModelConfig":
        kw.setdefault("head_widths", (1024, 512, 256))
        return cls(variant=ITERATIVE, **kw)

    @classmethod
    def for_variant(cls, variant: str, **kw) -> "ModelConfig":
        return cls.single_shot(**kw) if variant == SINGLE_SHOT else cls.iterative(**kw)

    def scaled(self, divisor: int) -> "ModelConfig":
        """Same topology with every width divided by ``divisor``."""
        return replace(
            self,
            encoder_widths=tuple(max(1, w // divisor) for w in self.encoder_widths),
            head_widths=tuple(max(1, w // divisor) for w in self.head_widths),
        )

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "encoder_widths": list(self.encoder_widths),
            "head_widths": list(self.head_widths),
            "dropout": self.dropout,
            "head_init_scale": self.head_init_scale,
        }


def head_layer_names(config: ModelConfig) -> list[str]:
    return [f"head{i}" for i in range(len(config.head_widths))] + ["head_out"]


def head_layer_sizes(config: ModelConfig) -> list[tuple[str, int, int]]:
    fan_in = 2 * config.encoder_widths[-1]
    sizes = []
    for name, w in zip(head_layer_names(config), config.head_widths + (7,)):
        sizes.append((name, fan_in, w))
        fan_in = w
    return sizes


@dataclass
class PCRNet:
    config: ModelConfig
    params: ParamStore

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> "PCRNet":
        params = init_params(encoder_layer_sizes(config.encoder_widths) + head_layer_sizes(config), rng, dtype)
        out = params["head_out"]
        out.W *= out.W.dtype.type(config.head_init_scale)
        # quaternion w bias: a fresh head predicts (near) identity instead of a random rotation
        out.b[3] = 1
        return cls(config, params)

    def check(self) -> None:
        expected = dict((n, (i, o)) for n, i, o in encoder_layer_sizes(self.config.encoder_widths))
        expected.update((n, (i, o)) for n, i, o in head_layer_sizes(self.config))
        got = {n: self.params[n].W.shape for n in self.params}
        if got != expected:
            raise ShapeError(f"parameters do not match {self.config.variant} config")

    @property
    def dtype(self):
        return self.params["head_out"].W.dtype


@dataclass
class RegistrationResult:
    transform: geo.RigidTransform
    per_iteration: list[geo.RigidTransform]
    iterations_used: int
    converged: bool
    elapsed: float
    residuals: list[float] = field(default_factory=list)


# --- head -------------------------------------------------------------------


@dataclass
class HeadCache:
    inputs: list[np.ndarray]
    pre_acts: list[np.ndarray]
    dropout_mask: np.ndarray
    feat_dim: int
    squeeze: bool


def head_forward(
    params: ParamStore,
    feat_s: np.ndarray,
    feat_t: np.ndarray,
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """FC stack on ``[feat_s, feat_t]``; returns the raw pose ``(..., 7)`` and a cache."""
    squeeze = np.ndim(feat_s) == 1
    fs = np.atleast_2d(feat_s)
    ft = np.atleast_2d(feat_t)
    names = head_layer_names(config)
    if fs.shape[-1] + ft.shape[-1] != params[names[0]].W.shape[0]:
        raise ShapeError("feature width does not match head input")
    h = np.concatenate([fs, ft], axis=-1)
    inputs, pre_acts = [], []
    for name in names[:-1]:
        layer = params[name]
        inputs.append(h)
        z = dense_forward(h, layer.W, layer.b)
        pre_acts.append(z)
        h = np.maximum(z, 0)
    h, mask = dropout_forward(h, config.dropout, rng, training)
    inputs.append(h)
    out = params[names[-1]]
    pose = dense_forward(h, out.W, out.b)
    cache = HeadCache(inputs, pre_acts, mask, fs.shape[-1], squeeze)
    return (pose[0] if squeeze else pose), cache


def head_backward(params: ParamStore, cache: HeadCache, config: ModelConfig, dpose: np.ndarray):
    """Accumulate head gradients; return ``(dfeat_s, dfeat_t)``."""
    names = head_layer_names(config)
    dh = np.atleast_2d(dpose)
    out = params[names[-1]]
    out.dW += cache.inputs[-1].T @ dh
    out.db += dh.sum(axis=0)
    dh = dropout_backward(cache.dropout_mask, dh @ out.W.T)
    for i in reversed(range(len(names) - 1)):
        layer = params[names[i]]
        dz = relu_backward(cache.pre_acts[i], dh)
        layer.dW += cache.inputs[i].T @ dz
        layer.db += dz.sum(axis=0)
        dh = dz @ layer.W.T
    dfs, dft = dh[:, : cache.feat_dim], dh[:, cache.feat_dim :]
    if cache.squeeze:
        return dfs[0], dft[0]
    return dfs, dft


# --- batched pose conversion -----------------------------------------------------


def _quat_rotmats(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(q), 3, 3), dtype=q.dtype)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def _quat_rotmat_grad(q: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Gradient wrt unit ``q`` (B, 4) given ``dR`` (B, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = dR
    dw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    dx = 2 * (
        y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2]
        + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2]
    )
    dy = 2 * (
        -2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2]
        - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2]
    )
    dz = 2 * (
        -2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1]
        + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1]
    )
    return np.stack([dw, dx, dy, dz], axis=1)


@dataclass
class PoseCache:
    q: np.ndarray
    norm: np.ndarray
    valid: np.ndarray


def pose_to_rt(pose: np.ndarray):
    """Batched raw pose ``(B, 7)`` to rotations ``(B, 3, 3)`` and translations ``(B, 3)``."""
    t = pose[:, :3]
    q_raw = pose[:, 3:]
    norm = np.linalg.norm(q_raw, axis=1)
    valid = norm >= geo.QUAT_EPS
    q = np.where(valid[:, None], q_raw / np.where(valid, norm, 1)[:, None], np.array([1, 0, 0, 0], pose.dtype))
    return _quat_rotmats(q), t, PoseCache(q, norm, valid)


def pose_to_rt_backward(cache: PoseCache, dR: np.ndarray, dt: np.ndarray) -> np.ndarray:
    dq = _quat_rotmat_grad(cache.q, dR)
    q = cache.q
    dq_raw = (dq - q * np.sum(q * dq, axis=1, keepdims=True)) / np.where(cache.valid, cache.norm, 1)[:, None]
    dq_raw[~cache.valid] = 0
    return np.concatenate([dt, dq_raw], axis=1)


# --- unrolled training pass -----------------------------------------------------


@dataclass
class StepCache:
    source: np.ndarray
    enc_cache: object
    head_cache: HeadCache
    pose_cache: PoseCache
    R: np.ndarray


@dataclass
class UnrollCache:
    template_cache: object
    steps: list[StepCache]
    squeeze: bool


def train_forward_iterative(
    model: PCRNet,
    source: np.ndarray,
    template: np.ndarray,
    n_iter: int,
    rng: np.random.Generator | None = None,
    training: bool = True,
):
    """Unrolled ``n_iter`` passes; returns the final transformed source and the cache chain."""
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    dtype = model.dtype
    src = np.asarray(source, dtype=dtype)
    tmpl = np.asarray(template, dtype=dtype)
    squeeze = src.ndim == 2
    if squeeze:
        src, tmpl = src[None], tmpl[None]
    feat_t, tcache = encode(model.params, tmpl)
    steps = []
    for _ in range(n_iter):
        feat_s, ecache = encode(model.params, src)
        pose, hcache = head_forward(model.params, feat_s, feat_t, model.config, training, rng)
        R, t, pcache = pose_to_rt(pose)
        new = np.einsum("bnj,bij->bni", src, R) + t[:, None, :]
        steps.append(StepCache(src, ecache, hcache, pcache, R))
        src = new
    cache = UnrollCache(tcache, steps, squeeze)
    return (src[0] if squeeze else src), cache


def train_backward_iterative(model: PCRNet, cache: UnrollCache, d_est: np.ndarray) -> None:
    """Accumulate parameter gradients for a loss gradient on the final source estimate."""
    params, config = model.params, model.config
    dsrc = np.asarray(d_est, dtype=model.dtype)
    if cache.squeeze:
        dsrc = dsrc[None]
    dfeat_t = None
    for step in reversed(cache.steps):
        dR = np.einsum("bni,bnj->bij", dsrc, step.source)
        dt = dsrc.sum(axis=1)
        d_direct = np.einsum("bni,bij->bnj", dsrc, step.R)
        dpose = pose_to_rt_backward(step.pose_cache, dR, dt)
        dfs, dft = head_backward(params, step.head_cache, config, dpose)
        dfeat_t = dft if dfeat_t is None else dfeat_t + dft
        dsrc = d_direct + encode_backward(params, step.enc_cache, dfs)
    encode_backward(params, cache.template_cache, dfeat_t)


# --- inference ----------------------------------------------------------------


def _predict(model: PCRNet, src: np.ndarray, feat_t: np.ndarray) -> geo.RigidTransform:
    feat_s, _ = encode(model.params, src)
    pose, _ = head_forward(model.params, feat_s, feat_t, model.config, training=False)
    return geo.pose7_to_transform(pose.astype(np.float64))


def register_single_shot(model: PCRNet, source: np.ndarray, template: np.ndarray) -> RegistrationResult:
    start = time.perf_counter()
    feat_t, _ = encode(model.params, template)
    T = _predict(model, np.asarray(source, dtype=np.float64), feat_t)
    elapsed = time.perf_counter() - start
    return RegistrationResult(T, [T], 1, False, elapsed)


def register_iterative(
    model: PCRNet,
    source: np.ndarray,
    template: np.ndarray,
    max_iter: int = DEFAULT_MAX_ITER,
    eps: float = DEFAULT_EPS,
) -> RegistrationResult:
    if max_iter < 1 or eps <= 0:
        raise ValueError("need max_iter >= 1 and eps > 0")
    start = time.perf_counter()
    feat_t, _ = encode(model.params, template)
    src = np.asarray(source, dtype=np.float64)
    total = geo.RigidTransform.identity()
    steps: list[geo.RigidTransform] = []
    converged = False
    for _ in range(max_iter):
        step = _predict(model, src, feat_t)
        steps.append(step)
        prev, total = total, geo.compose(step, total)
        src = geo.apply_transform(step, src)
        if geo.convergence_delta(total, prev) < eps:
            converged = True
            break
    elapsed = time.perf_counter() - start
    return RegistrationResult(total, steps, len(steps), converged, elapsed)


def register(model: PCRNet, source, template, max_iter: int = DEFAULT_MAX_ITER, eps: float = DEFAULT_EPS):
    if model.config.variant == SINGLE_SHOT:
        return register_single_shot(model, source, template)
    return register_iterative(model, source, template, max_iter, eps)
