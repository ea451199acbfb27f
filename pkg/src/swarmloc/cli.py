"""Command-line entry point: ``swarmloc {run,experiment,metrics,validate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import (
    DEFAULT_BIN_WIDTH,
    ExperimentSpec,
    dop_over_distance,
    emit_csv,
    metrics_from_traces,
    position_error_stats,
    run_experiment,
)
from .simengine import PLANNERS, ConfigError, ScenarioConfig, run_scenario

log = logging.getLogger("swarmloc")


def _load(args) -> ScenarioConfig:
    cfg = ScenarioConfig.load(args.config) if args.config else ScenarioConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "planner", None):
        cfg.planner_type = args.planner
        for r in cfg.robots:
            r.planner = None
    cfg.validate()
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tr = run_scenario(cfg)
    tr.write(out / "trace.jsonl")
    emit_csv(dop_over_distance(tr, args.bin_width), out / "dop_over_distance.csv")
    stats = position_error_stats(tr)
    emit_csv(stats, out / "position_error.csv")
    print(f"{cfg.planner_type}: {tr.n_steps} steps, reached={tr.reached[-1].tolist()}, "
          f"swarm mean error {stats.swarm_mean:.4f} m, swarm max error {stats.swarm_max:.4f} m")
    return 0


def cmd_experiment(args) -> int:
    cfg = _load(args)
    variants = [args.planner] if args.planner else list(PLANNERS)
    spec = ExperimentSpec(cfg, trials=args.trials, variants=variants, out_dir=Path(args.out),
                          bin_width=args.bin_width, parallel=args.parallel)
    summary = run_experiment(spec)
    for v in variants:
        if v in summary.errors:
            e = summary.errors[v]
            d = summary.dop[v]
            print(f"{v}: mean DOP {d.mean.mean():.4f}, swarm mean error {e.swarm_mean:.4f} m, "
                  f"swarm max error {e.swarm_max:.4f} m")
    failed = [t for t in summary.trials if t.error]
    for t in failed:
        print(f"FAILED {t.variant} seed {t.seed}: {t.error}", file=sys.stderr)
    return 1 if failed else 0


def cmd_metrics(args) -> int:
    for p in metrics_from_traces(args.traces, args.out, args.bin_width):
        print(p)
    return 0


def cmd_validate(args) -> int:
    try:
        cfg = _load(args)
    except (ConfigError, OSError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 2
    print(f"ok: {len(cfg.robots)} robots, config hash {cfg.config_hash()[:16]}")
    if args.dump:
        print(json.dumps(cfg.to_dict(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swarmloc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, planner=True):
        sp.add_argument("--config", help="scenario YAML file (defaults built in)")
        if seed:
            sp.add_argument("--seed", type=int)
        if planner:
            sp.add_argument("--planner", choices=PLANNERS)

    sp = sub.add_parser("run", help="run one scenario")
    common(sp)
    sp.add_argument("--out", default="out")
    sp.add_argument("--bin-width", type=float, default=DEFAULT_BIN_WIDTH)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("experiment", help="seeded batch comparing planners")
    common(sp)
    sp.add_argument("--trials", type=int, default=30)
    sp.add_argument("--out", default="out")
    sp.add_argument("--parallel", type=int, default=1)
    sp.add_argument("--bin-width", type=float, default=DEFAULT_BIN_WIDTH)
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("metrics", help="recompute CSVs from stored traces")
    sp.add_argument("--traces", required=True, help="directory of *.jsonl traces")
    sp.add_argument("--out", default="out")
    sp.add_argument("--bin-width", type=float, default=DEFAULT_BIN_WIDTH)
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("validate", help="check a scenario config")
    common(sp, seed=False, planner=False)
    sp.add_argument("--dump", action="store_true", help="print the resolved config")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
