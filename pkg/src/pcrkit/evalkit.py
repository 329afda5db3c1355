"""Evaluation protocol: test pairs, per-method runs, success curves, AUC, CSV reports."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import geometry as geo
from .meshio import add_gaussian_noise
from .pcrnet import RegistrationResult

THRESHOLDS = np.arange(0, 181, dtype=np.float64)
FAILED_ROT_ERR = 180.0
REPLAY_TOL = 1e-9

DETAIL_COLUMNS = ["method", "pair_id", "rot_err_deg", "trans_err", "time_ms", "iters", "converged"]
SUMMARY_COLUMNS = ["method", "rot_mean", "rot_std", "trans_mean", "trans_std", "time_mean_ms", "time_std_ms", "auc"]

Method = Callable[[np.ndarray, np.ndarray], RegistrationResult]


@dataclass(frozen=True)
class TestPair:
    pair_id: int
    template: np.ndarray
    source: np.ndarray
    gt: geo.RigidTransform  # maps the template onto the noiseless source
    sigma: float = 0.0

    __test__ = False  # not a pytest class

    @property
    def target(self) -> geo.RigidTransform:
        """The transform a registration should return: source back onto template."""
        return self.gt.inverse()


@dataclass
class EvalRecord:
    method: str
    pair_id: int
    rot_err_deg: float
    trans_err: float
    elapsed: float
    iters: int
    converged: bool


@dataclass
class SuccessCurve:
    thresholds: np.ndarray
    ratios: np.ndarray


@dataclass
class SummaryRow:
    method: str
    rot_mean: float
    rot_std: float
    trans_mean: float
    trans_std: float
    time_mean_ms: float
    time_std_ms: float
    auc: float


@dataclass
class BenchmarkReport:
    records: list[EvalRecord]
    summary: list[SummaryRow]
    curves: dict[str, SuccessCurve]
    replay_violations: list[tuple[str, int]] = field(default_factory=list)


def generate_pairs(
    templates: Sequence[np.ndarray],
    count: int,
    rng: np.random.Generator,
    angle_range_deg: float = 45.0,
    trans_range: float = 1.0,
    noise_sigma: float = 0.0,
) -> list[TestPair]:
    if len(templates) == 0:
        raise ValueError("no templates")
    pairs = []
    for k in range(count):
        template = np.asarray(templates[int(rng.integers(len(templates)))], dtype=np.float64)
        gt = geo.random_transform(rng, angle_range_deg, trans_range)
        source = add_gaussian_noise(geo.apply_transform(gt, template), noise_sigma, rng)
        pairs.append(TestPair(k, template, source, gt, noise_sigma))
    return pairs


def success_curve(errors: Sequence[float]) -> SuccessCurve:
    """Fraction of errors strictly below each 1-degree threshold in [0, 180]."""
    errs = np.asarray(errors, dtype=np.float64)
    if errs.size == 0:
        raise ValueError("no errors to summarize")
    ratios = (errs[None, :] < THRESHOLDS[:, None]).mean(axis=1)
    return SuccessCurve(THRESHOLDS.copy(), ratios)


def auc(curve: SuccessCurve) -> float:
    """Trapezoidal area under the success curve, normalized by 180 degrees."""
    return float(np.trapezoid(curve.ratios, curve.thresholds) / 180.0)


def replay_ok(result: RegistrationResult, tol: float = REPLAY_TOL) -> bool:
    """The reported transform equals the composition of its per-iteration steps."""
    chained = geo.compose_chain(result.per_iteration)
    return bool(np.max(np.abs(chained.matrix() - result.transform.matrix())) <= tol)


def _evaluate(name: str, method: Method, pair: TestPair):
    start = time.perf_counter()
    try:
        result = method(pair.source, pair.template)
    except Exception:  # noqa: BLE001 - a crashing method is a failed registration
        return EvalRecord(name, pair.pair_id, FAILED_ROT_ERR, math.inf, time.perf_counter() - start, 0, False), True
    elapsed = time.perf_counter() - start
    T = result.transform
    if not (np.all(np.isfinite(T.rotation)) and np.all(np.isfinite(T.translation))):
        return EvalRecord(name, pair.pair_id, FAILED_ROT_ERR, math.inf, elapsed, result.iterations_used, False), True
    target = pair.target
    record = EvalRecord(
        name,
        pair.pair_id,
        geo.rotation_error_deg(T, target),
        geo.translation_error(T, target),
        elapsed,
        result.iterations_used,
        result.converged,
    )
    return record, replay_ok(result)


def summarize(name: str, records: Sequence[EvalRecord]) -> tuple[SummaryRow, SuccessCurve]:
    rot = np.array([r.rot_err_deg for r in records])
    trans = np.array([r.trans_err for r in records])
    ms = np.array([r.elapsed for r in records]) * 1000.0
    curve = success_curve(rot)
    row = SummaryRow(
        name,
        float(rot.mean()),
        float(rot.std()),
        float(trans.mean()),
        float(trans.std()) if np.all(np.isfinite(trans)) else math.inf,
        float(ms.mean()),
        float(ms.std()),
        auc(curve),
    )
    return row, curve


def run_benchmark(methods: Mapping[str, Method], pairs: Sequence[TestPair], threads: int = 1) -> BenchmarkReport:
    """Run every method on the same pairs. Failures become 180-degree records."""
    if not methods or not pairs:
        raise ValueError("need at least one method and one pair")
    records: list[EvalRecord] = []
    summary: list[SummaryRow] = []
    curves: dict[str, SuccessCurve] = {}
    violations: list[tuple[str, int]] = []
    for name, method in methods.items():
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                outcomes = list(pool.map(lambda p: _evaluate(name, method, p), pairs))
        else:
            outcomes = [_evaluate(name, method, p) for p in pairs]
        method_records = sorted((rec for rec, _ in outcomes), key=lambda r: r.pair_id)
        violations += [(name, rec.pair_id) for rec, ok in outcomes if not ok]
        row, curve = summarize(name, method_records)
        records += method_records
        summary.append(row)
        curves[name] = curve
    return BenchmarkReport(records, summary, curves, violations)


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def write_report(report: BenchmarkReport, out_dir: str | Path, timing: bool = True) -> list[Path]:
    """Write ``detail.csv``, ``summary.csv`` and ``curve_<method>.csv``.

    With ``timing=False`` the wall-clock columns are written as 0 so reruns are byte-identical.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "detail.csv", out / "summary.csv"]
    with open(paths[0], "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(DETAIL_COLUMNS)
        for r in report.records:
            ms = r.elapsed * 1000.0 if timing else 0.0
            w.writerow([r.method, r.pair_id, _fmt(r.rot_err_deg), _fmt(r.trans_err), _fmt(ms), r.iters, int(r.converged)])
    with open(paths[1], "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in report.summary:
            tm, ts = (s.time_mean_ms, s.time_std_ms) if timing else (0.0, 0.0)
            w.writerow([s.method] + [_fmt(v) for v in (s.rot_mean, s.rot_std, s.trans_mean, s.trans_std, tm, ts, s.auc)])
    for name, curve in report.curves.items():
        path = out / f"curve_{name}.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["threshold_deg", "success_ratio"])
            for th, ratio in zip(curve.thresholds, curve.ratios):
                w.writerow([int(th), _fmt(ratio)])
        paths.append(path)
    return paths


def format_table(summary: Sequence[SummaryRow]) -> str:
    """Plain-text table with mean/std rotation error, translation error, time and AUC."""
    head = f"{'method':<14}{'rot mean':>10}{'rot std':>10}{'trans mean':>12}{'trans std':>11}{'ms mean':>10}{'ms std':>9}{'AUC':>8}"
    lines = [head]
    for s in summary:
        lines.append(
            f"{s.method:<14}{s.rot_mean:>10.3f}{s.rot_std:>10.3f}{s.trans_mean:>12.4f}{s.trans_std:>11.4f}"
            f"{s.time_mean_ms:>10.2f}{s.time_std_ms:>9.2f}{s.auc:>8.4f}"
        )
    return "\n".join(lines)
