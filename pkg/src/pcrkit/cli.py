"""Command line: ``sample``, ``train``, ``register``, ``benchmark``.

stdout carries data, stderr diagnostics. Exit codes: 0 ok, 1 runtime failure,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evalkit, geometry as geo, meshio
from .icp import ICP_MAX_ITER, icp_register
from .pcrnet import DEFAULT_EPS, DEFAULT_MAX_ITER, ITERATIVE, SINGLE_SHOT, ModelConfig, PCRNet, register
from .trainer import ConfigError, load_model, parse_config, resume, train, write_history

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
METHOD_VARIANTS = {"pcrnet": SINGLE_SHOT, "pcrnet-iter": ITERATIVE}
METHODS = ("pcrnet", "pcrnet-iter", "icp")


class UsageError(Exception):
    pass


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("PCR_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"PCR_SEED must be an integer, got {env!r}") from None


def _require_file(path: str | None, what: str) -> Path:
    if not path:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def cmd_sample(args) -> int:
    off = _require_file(args.off, "--off")
    if args.points < 1:
        raise UsageError("--points must be positive")
    try:
        mesh = meshio.parse_off(off.read_bytes())
    except meshio.OffParseError as exc:
        raise UsageError(f"{off}: {exc}") from None
    cloud = meshio.sample_mesh(mesh, args.points, np.random.default_rng(_seed(args)))
    meshio.save_cloud(args.out, cloud)
    return EXIT_OK


def _load_templates(directory: str) -> list[np.ndarray]:
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"not a directory: {d}")
    paths = meshio.list_clouds(d)
    if not paths:
        raise UsageError(f"no .pcrc/.xyz clouds in {d}")
    return [meshio.load_cloud(p) for p in paths]


def cmd_train(args) -> int:
    cfg_path = _require_file(args.config, "--config")
    try:
        config = parse_config(cfg_path.read_text())
    except ConfigError as exc:
        raise UsageError(f"config key {exc.key!r}: {exc}") from None
    templates = _load_templates(args.data)
    result = None
    if args.resume:
        result, saved = resume(_require_file(args.out, "--out checkpoint"))
        if saved.model_config() != config.model_config():
            raise UsageError("config describes a different model than the checkpoint")

    def report(row):
        print(f"epoch {row.epoch} loss {row.mean_loss:.6f} lr {row.lr:.3g}", file=sys.stderr)

    result = train(templates, config, result, progress=report, checkpoint_path=args.out)
    write_history(args.history or f"{args.out}.history.csv", result.history)
    return EXIT_OK


def _model_for(method: str, ckpt: str | None) -> PCRNet:
    model, _, _ = load_model(_require_file(ckpt, "--ckpt"))
    if model.config.variant != METHOD_VARIANTS[method]:
        raise UsageError(f"--method {method} needs a {METHOD_VARIANTS[method]} checkpoint, got {model.config.variant}")
    return model


def _method_fn(method: str, model: PCRNet | None, max_iter: int | None, eps: float):
    if method == "icp":
        n = max_iter or ICP_MAX_ITER
        return lambda s, t: icp_register(s, t, n, eps)
    n = max_iter or DEFAULT_MAX_ITER
    return lambda s, t: register(model, s, t, n, eps)


def cmd_register(args) -> int:
    source = meshio.load_cloud(_require_file(args.source, "--source"))
    template = meshio.load_cloud(_require_file(args.template, "--template"))
    model = None if args.method == "icp" else _model_for(args.method, args.ckpt)
    result = _method_fn(args.method, model, args.max_iter, args.eps)(source, template)
    print(result.transform.to_text())
    if args.gt:
        gt = geo.RigidTransform.from_text(_require_file(args.gt, "--gt").read_text())
        print(f"rot_err_deg {geo.rotation_error_deg(result.transform, gt):.9g}")
        print(f"trans_err {geo.translation_error(result.transform, gt):.9g}")
    print(f"iterations {result.iterations_used} converged {int(result.converged)}")
    print(f"time_ms {result.elapsed * 1000.0:.3f}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if not methods or unknown:
        raise UsageError(f"unknown methods {unknown}; choose from {', '.join(METHODS)}")
    if args.pairs < 1:
        raise UsageError("--pairs must be positive")
    templates = _load_templates(args.templates)
    seed = _seed(args)
    pairs = evalkit.generate_pairs(
        templates, args.pairs, np.random.default_rng(seed), args.angle_range, args.trans_range, args.noise_sigma
    )
    fns = {}
    for m in methods:
        model = None
        if m in METHOD_VARIANTS:
            ckpt = args.ckpt_single if m == "pcrnet" else args.ckpt_iter
            if ckpt:
                model = _model_for(m, ckpt)
            else:
                print(f"warning: no checkpoint for {m}; using an untrained model", file=sys.stderr)
                config = ModelConfig.for_variant(METHOD_VARIANTS[m])
                model = PCRNet.init(config, np.random.default_rng(seed))
        fns[m] = _method_fn(m, model, args.max_iter, args.eps)
    report = evalkit.run_benchmark(fns, pairs, threads=args.threads)
    evalkit.write_report(report, args.out, timing=not args.no_timing)
    print(evalkit.format_table(report.summary))
    if report.replay_violations:
        print(f"error: composed transform mismatch on {report.replay_violations}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcrkit", description="Point cloud registration with PCRNet and ICP.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="sample a normalized point cloud from an OFF mesh")
    p.add_argument("--off", required=True)
    p.add_argument("--points", type=int, default=meshio.DEFAULT_POINTS)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help=".xyz for ASCII, anything else for packed binary")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="train a PCRNet model")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="directory of template clouds")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="history CSV path (default: <out>.history.csv)")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint at --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("register", help="register a source cloud onto a template")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--ckpt")
    p.add_argument("--source", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--gt", help="file with the expected 4x4 transform")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("benchmark", help="evaluate methods on random transforms of template clouds")
    p.add_argument("--methods", required=True, help="comma list of " + ",".join(METHODS))
    p.add_argument("--templates", required=True)
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--angle-range", type=float, default=45.0)
    p.add_argument("--trans-range", type=float, default=1.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt-single", help="single-shot checkpoint for 'pcrnet'")
    p.add_argument("--ckpt-iter", help="iterative checkpoint for 'pcrnet-iter'")
    p.add_argument("--max-iter", type=int, help="default 20 for pcrnet-iter, 100 for icp")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--no-timing", action="store_true", help="write 0 in time columns (reproducible CSVs)")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
