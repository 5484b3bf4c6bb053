"""Command-line entry point: ``spoofguard run | batch | metrics``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import config as config_mod
from .errors import ConfigurationError, SpoofGuardError
from .export import export_trace, read_trace, write_summary
from .sim import SimulationError, run_batch, run_scenario, summarize, trace_metrics


def _load_config(args):
    if args.config and args.preset:
        raise ConfigurationError("give either --config or --preset, not both")
    if args.config:
        return config_mod.load(args.config)
    return config_mod.preset(args.preset or "paper-v")


def _add_source(p):
    p.add_argument("--config", type=Path, help="scenario YAML file")
    p.add_argument("--preset", choices=sorted(config_mod.PRESETS), help="built-in scenario (default paper-v)")


def _jsonable(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    seed = int(cfg.section("sim")["seed"]) if args.seed is None else args.seed
    name = out / f"trace_seed{seed}.csv"
    try:
        trace = run_scenario(cfg, seed, steps=args.steps)
    except SimulationError as exc:
        export_trace(exc.trace, name)
        raise
    path, ev = export_trace(trace, name)
    (out / "config.yaml").write_text(cfg.to_yaml(), encoding="utf-8")
    m = trace_metrics(
        trace,
        zeta=float(cfg.section("escape")["zeta"]),
        goal=cfg.model.position(cfg.goal),
        goal_tolerance=float(cfg.section("sim")["goal_tolerance"]),
        vel_index=cfg.model.vel_index,
    )
    print(json.dumps(_jsonable(m), indent=2))
    print(f"wrote {path} and {ev}", file=sys.stderr)
    return 0


def cmd_batch(args) -> int:
    cfg = _load_config(args)
    if args.seeds < 1:
        raise ConfigurationError("--seeds must be at least 1")
    seed0 = int(cfg.section("sim")["seed"]) if args.seed0 is None else args.seed0
    seeds = range(seed0, seed0 + args.seeds)
    rows = run_batch(cfg, seeds, workers=args.workers)
    out = Path(args.out)
    write_summary(rows, out / "batch_runs.csv")
    agg = summarize(rows)
    write_summary([agg], out / "batch_summary.csv")
    print(json.dumps(_jsonable(agg), indent=2))
    return 0 if agg["failed"] == 0 else 1


def cmd_metrics(args) -> int:
    trace = read_trace(args.trace)
    m = trace_metrics(trace, zeta=args.zeta)
    print(json.dumps(_jsonable(m), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spoofguard", description="UAV escape control under GPS spoofing")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one seeded scenario and export its trace")
    _add_source(p)
    p.add_argument("--seed", type=int, default=None, help="defaults to sim.seed")
    p.add_argument("--steps", type=int, default=None, help="override sim.steps")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="Monte Carlo over consecutive seeds")
    _add_source(p)
    p.add_argument("--seeds", type=int, required=True, help="number of seeds")
    p.add_argument("--seed0", type=int, default=None, help="first seed (defaults to sim.seed)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("metrics", help="summarize an exported trace")
    p.add_argument("--trace", type=Path, required=True)
    p.add_argument("--zeta", type=float, default=3.0)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SpoofGuardError as exc:
        print(f"spoofguard: {exc.category} error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"spoofguard: input error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
