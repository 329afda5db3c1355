"""Synthetic pair generation, the training loop, presets and checkpointing."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import geometry as geo
from .losses import LOSSES, batch_loss
from .meshio import add_gaussian_noise, farthest_point_sample
from .nncore import AdamState, adam_step, load_checkpoint, save_checkpoint
from .pcrnet import ITERATIVE, SINGLE_SHOT, TRAIN_UNROLL, VARIANTS, ModelConfig, PCRNet, train_backward_iterative, train_forward_iterative

log = logging.getLogger(__name__)

PRESETS = {
    "tiny": {"width_divisor": 8, "points": 128, "epochs": 50},
    "paper": {"width_divisor": 1, "points": 1024, "epochs": 300},
}
SCOPES = ("one-model", "one-category", "multi-category")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    preset: str = "paper"
    variant: str = ITERATIVE
    dataset_scope: str = "one-model"
    points: int = 1024
    batch_size: int = 32
    epochs: int = 300
    lr: float = 1e-3
    decay_rate: float = 0.7
    decay_every: int = 3_000_000
    noise_lo: float = 0.0
    noise_hi: float = 0.0
    unroll: int = 0  # 0: 8 for iterative, 1 for single-shot
    angle_range: float = 45.0
    trans_range: float = 1.0
    seed: int = 0
    loss: str = "emd"
    width_divisor: int = 1
    dropout: float = 0.5
    pairs_per_epoch: int = 0  # 0: one pair per template
    checkpoint_every: int = 10

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {self.preset!r}")
        if self.variant not in VARIANTS:
            raise ConfigError("variant", f"unknown variant {self.variant!r}")
        if self.dataset_scope not in SCOPES:
            raise ConfigError("dataset_scope", f"expected one of {SCOPES}")
        if self.loss not in LOSSES:
            raise ConfigError("loss", f"unknown loss {self.loss!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if self.points < 1:
            raise ConfigError("points", "must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs", "must be non-negative")
        if self.width_divisor < 1:
            raise ConfigError("width_divisor", "must be >= 1")
        for key in ("noise_lo", "noise_hi", "angle_range", "trans_range", "lr"):
            if getattr(self, key) < 0:
                raise ConfigError(key, "must be non-negative")
        if self.noise_hi < self.noise_lo:
            raise ConfigError("noise_hi", "must be >= noise_lo")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout", "must be in [0, 1)")

    @property
    def n_unroll(self) -> int:
        if self.unroll:
            return self.unroll
        return TRAIN_UNROLL if self.variant == ITERATIVE else 1

    def model_config(self) -> ModelConfig:
        dropout = self.dropout if self.variant == ITERATIVE else 0.0
        return ModelConfig.for_variant(self.variant, dropout=dropout).scaled(self.width_divisor)

    @classmethod
    def from_preset(cls, preset: str = "paper", **overrides) -> "TrainConfig":
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}")
        values = {**PRESETS[preset], **overrides}
        return cls(preset=preset, **values)


def parse_config(text: str) -> TrainConfig:
    """Flat ``key = value`` text; ``#`` starts a comment. Preset defaults apply first."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    raw: dict[str, str] = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, "expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(key, "unknown config key")
        raw[key] = value
    values: dict[str, object] = {}
    for key, value in raw.items():
        kind = types[key]
        try:
            if kind == "int":
                values[key] = int(float(value))
            elif kind == "float":
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError:
            raise ConfigError(key, f"bad value {value!r}") from None
    preset = str(values.pop("preset", "paper"))
    return TrainConfig.from_preset(preset, **values)


def format_config(config: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(config).items())


@dataclass
class TrainSample:
    template: np.ndarray
    source: np.ndarray
    gt: geo.RigidTransform  # maps template onto the noiseless source
    sigma: float


def make_sample(template: np.ndarray, rng: np.random.Generator, config: TrainConfig) -> TrainSample:
    gt = geo.random_transform(rng, config.angle_range, config.trans_range)
    sigma = float(rng.uniform(config.noise_lo, config.noise_hi))
    source = add_gaussian_noise(geo.apply_transform(gt, template), sigma, rng)
    return TrainSample(np.asarray(template, dtype=np.float64), source, gt, sigma)


@dataclass
class HistoryRow:
    epoch: int
    mean_loss: float
    lr: float


@dataclass
class TrainResult:
    model: PCRNet
    adam: AdamState
    history: list[HistoryRow] = field(default_factory=list)
    rng: np.random.Generator | None = None


def prepare_templates(templates: Sequence[np.ndarray], points: int) -> np.ndarray:
    out = []
    for t in templates:
        t = np.asarray(t, dtype=np.float64)
        if len(t) < points:
            raise ValueError(f"template has {len(t)} points, config needs {points}")
        out.append(farthest_point_sample(t, points) if len(t) > points else t)
    return np.stack(out)


def write_history(path: str | Path, history: Sequence[HistoryRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "mean_loss", "lr"])
        for row in history:
            w.writerow([row.epoch, repr(row.mean_loss), repr(row.lr)])


def save_training_checkpoint(path, result: TrainResult, config: TrainConfig) -> None:
    extra = {
        "variant": result.model.config.variant,
        "model": result.model.config.to_dict(),
        "train_config": asdict(config),
        "epoch": len(result.history),
        "history": [asdict(h) for h in result.history],
        "rng_state": result.rng.bit_generator.state if result.rng is not None else None,
    }
    save_checkpoint(path, result.model.params, result.adam, extra)


def load_model(path, expect_variant: str | None = None) -> tuple[PCRNet, AdamState | None, dict]:
    """Load a checkpoint; the head shape is checked against the stored variant."""
    params, adam, manifest = load_checkpoint(path)
    mc = manifest["model"]
    config = ModelConfig(
        variant=mc["variant"],
        encoder_widths=tuple(mc["encoder_widths"]),
        head_widths=tuple(mc["head_widths"]),
        dropout=mc["dropout"],
        head_init_scale=mc["head_init_scale"],
    )
    if expect_variant is not None and config.variant != expect_variant:
        raise ValueError(f"checkpoint holds a {config.variant} model, expected {expect_variant}")
    model = PCRNet(config, params)
    model.check()
    return model, adam, manifest


def resume(path) -> tuple[TrainResult, TrainConfig]:
    model, adam, manifest = load_model(path)
    config = TrainConfig(**manifest["train_config"])
    rng = np.random.default_rng()
    rng.bit_generator.state = manifest["rng_state"]
    history = [HistoryRow(**h) for h in manifest["history"]]
    return TrainResult(model, adam, history, rng), config


def train(
    templates: Sequence[np.ndarray],
    config: TrainConfig,
    result: TrainResult | None = None,
    progress: Callable[[HistoryRow], None] | None = None,
    checkpoint_path: str | Path | None = None,
) -> TrainResult:
    """Train (or continue training ``result``) until ``config.epochs`` epochs are recorded."""
    if len(templates) == 0:
        raise ValueError("empty template set")
    data = prepare_templates(templates, config.points)
    if result is None:
        rng = np.random.default_rng(config.seed)
        model = PCRNet.init(config.model_config(), rng)
        adam = AdamState(lr=config.lr, decay_rate=config.decay_rate, decay_every=config.decay_every)
        result = TrainResult(model, adam, [], rng)
    model, adam, rng = result.model, result.adam, result.rng
    pairs = config.pairs_per_epoch or len(data)
    steps_per_epoch = math.ceil(pairs / config.batch_size)
    n_iter = config.n_unroll

    for epoch in range(len(result.history) + 1, config.epochs + 1):
        order = np.concatenate([rng.permutation(len(data)) for _ in range(math.ceil(pairs / len(data)))])[:pairs]
        losses = []
        lr_used = adam.effective_lr(adam.t + 1)
        for s in range(steps_per_epoch):
            idx = order[s * config.batch_size : (s + 1) * config.batch_size]
            samples = [make_sample(data[i], rng, config) for i in idx]
            src = np.stack([sm.source for sm in samples])
            tmpl = np.stack([sm.template for sm in samples])
            est, cache = train_forward_iterative(model, src, tmpl, n_iter, rng, training=True)
            if not np.all(np.isfinite(est)):
                raise TrainingDiverged(f"non-finite estimate at epoch {epoch}, step {adam.t + 1}")
            loss = batch_loss(config.loss, est.astype(np.float64), tmpl)
            if not np.isfinite(loss.value) or not np.all(np.isfinite(loss.grad)):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {adam.t + 1}")
            train_backward_iterative(model, cache, loss.grad)
            adam_step(model.params, adam)
            losses.append(loss.value)
        row = HistoryRow(epoch, float(np.mean(losses)), lr_used)
        result.history.append(row)
        log.info("epoch %d loss %.6f lr %.3g", row.epoch, row.mean_loss, row.lr)
        if progress:
            progress(row)
        if checkpoint_path and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_training_checkpoint(checkpoint_path, result, config)
    if checkpoint_path:
        save_training_checkpoint(checkpoint_path, result, config)
    return result


def with_epochs(config: TrainConfig, epochs: int) -> TrainConfig:
    return replace(config, epochs=epochs)
