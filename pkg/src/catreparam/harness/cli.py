"""Command-line entry point.

Every subcommand accepts ``--config``, ``--seed``, ``--out`` and
``--scale``; results go under ``--out`` and a one-line JSON summary is
printed. Failures print ``{"error": ..., "type": ...}`` to stderr and exit
with status 1.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from ..seeding import STREAM_EVAL, make_rng
from .checks import gradient_checks, run_audit_suite
from .config import ExperimentConfig, desk_config
from .figures import DENSITY_COLUMNS, MEAN_COLUMNS, emit_density_figure_data
from .grid import run_grid, write_grid, write_rows
from .speed import SPEED_COLUMNS, run_speed_benchmark, speed_ratios

COMMANDS = ("audit", "density", "grad-check", "train-sbn", "train-vae", "train-ssvae", "speed")
_TASK = {"train-sbn": "sbn", "train-vae": "vae", "train-ssvae": "ssvae", "audit": "audit", "density": "density", "speed": "speed", "grad-check": "audit"}


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catreparam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON experiment config")
        p.add_argument("--seed", type=_u64, default=0, help="master seed")
        p.add_argument("--out", type=Path, default=Path("runs") / name)
        p.add_argument("--scale", type=float, help="width scale factor (overrides the config)")
        if name == "density":
            p.add_argument("--k", type=int, choices=(2, 3), default=3)
            p.add_argument("--taus", type=float, nargs="+", default=[0.1, 0.5, 1.0, 5.0, 10.0])
            p.add_argument("--probs", type=float, nargs="+")
            p.add_argument("--resolution", type=int, default=50)
        if name == "audit":
            p.add_argument("--trials", type=int, help="trials per audit")
        if name.startswith("train-"):
            p.add_argument("--workers", type=int, help="parallel worker processes")
    return parser


def load_config(args) -> ExperimentConfig:
    task = _TASK[args.command]
    if args.config is not None:
        config = ExperimentConfig.load(args.config)
        if config.task != task and task != "audit":
            raise ValueError(f"config task {config.task!r} does not match command {args.command!r}")
    else:
        config = desk_config(task)
    return config.override(scale=args.scale, seeds=(args.seed,), workers=getattr(args, "workers", None))


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


def cmd_audit(args, config, out):
    trials = args.trials or config.audit_trials
    checks = run_audit_suite(trials, seed=args.seed)
    _write_json(out / "audit.json", [c.to_dict() for c in checks])
    return {"checks": len(checks), "all_passed": all(c.passed for c in checks)}


def cmd_grad_check(args, config, out):
    checks = gradient_checks(seed=args.seed)
    _write_json(out / "grad_check.json", [c.to_dict() for c in checks])
    return {"checks": len(checks), "all_passed": all(c.passed for c in checks)}


def cmd_density(args, config, out):
    probs = args.probs or ([0.2, 0.3, 0.5] if args.k == 3 else [0.3, 0.7])
    rng = make_rng(args.seed, 0, STREAM_EVAL)
    density, means = emit_density_figure_data(args.k, args.taus, probs, rng, resolution=args.resolution)
    write_rows(out / "density.csv", DENSITY_COLUMNS, density)
    write_rows(out / "means.csv", MEAN_COLUMNS, means)
    return {"density_rows": len(density), "mean_rows": len(means)}


def cmd_train(args, config, out):
    result = write_grid(run_grid(config), out)
    sel = json.loads((result / "selection.json").read_text())["selection"]
    return {"config_hash": config.config_hash(), "selection": sel}


def cmd_speed(args, config, out):
    rows = run_speed_benchmark(config.speed_k, config, seed=args.seed)
    write_rows(out / "speed.csv", SPEED_COLUMNS, [r.as_tuple() for r in rows])
    return {"ratios": {str(k): round(v, 3) for k, v in speed_ratios(rows).items()}}


HANDLERS = {
    "audit": cmd_audit,
    "grad-check": cmd_grad_check,
    "density": cmd_density,
    "train-sbn": cmd_train,
    "train-vae": cmd_train,
    "train-ssvae": cmd_train,
    "speed": cmd_speed,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        summary = HANDLERS[args.command](args, config, out)
        summary = {"command": args.command, "seed": args.seed, "out": str(out), "seconds": round(time.perf_counter() - start, 3), **summary}
        print(json.dumps(summary, default=_jsonable))
        return 0
    except Exception as err:  # report every failure as JSON
        print(json.dumps({"error": str(err), "type": type(err).__name__, "command": args.command}), file=sys.stderr)
        return 1


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


if __name__ == "__main__":
    sys.exit(main())
