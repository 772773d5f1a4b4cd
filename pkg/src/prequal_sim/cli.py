"""Experiment runner CLI.

Resolves a run configuration (experiment presets, optional JSON config file,
command-line flags, in that order), executes the runs, and writes a metrics
CSV plus a resolved-config echo to the output directory with a summary table
on stdout.  Exit codes: 0 success, 2 configuration error, 3 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import RunConfig, apply_overrides, load_run_config
from .errors import ConfigError, InvariantError
from .metrics import SegmentMetrics, write_csv
from .sim_engine import simulate_run
from .workload import EXPERIMENT_PRESETS, EXPERIMENTS, build_schedule


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prequal-sim",
        description="Run load-balancing testbed experiments and export metrics CSVs.",
    )
    parser.add_argument("--experiment", choices=EXPERIMENTS,
                        help="experiment to run (or set it in --config)")
    parser.add_argument("--config", help="JSON config file (see README for schema)")
    parser.add_argument("--seed", type=int, help="master seed (default 1)")
    parser.add_argument("--runs", type=int, help="number of seeded runs (default 1)")
    parser.add_argument("--out", help="output directory (default ./out)")
    parser.add_argument("--parallel", type=int, default=1, metavar="N",
                        help="run up to N seeded runs in parallel processes")
    parser.add_argument("--policy", help="only execute schedule steps for this policy")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    if args.config:
        cfg = load_run_config(args.config, EXPERIMENTS)
        if args.experiment and args.experiment != cfg.experiment:
            raise ConfigError(
                "experiment given both on the command line and in the config file"
            )
    else:
        if not args.experiment:
            raise ConfigError("missing config key: experiment "
                              "(pass --experiment or --config)")
        cfg = RunConfig(experiment=args.experiment)
    preset = EXPERIMENT_PRESETS.get(cfg.experiment, {})
    merged = RunConfig(experiment=cfg.experiment)
    apply_overrides(merged, preset)
    if args.config:
        # Re-apply the file on top of the preset so user keys win.
        import json

        raw = json.loads(Path(args.config).read_text())
        raw.pop("experiment", None)
        apply_overrides(merged, raw)
    if args.seed is not None:
        merged.master_seed = args.seed
    if args.runs is not None:
        merged.n_runs = args.runs
    if args.out is not None:
        merged.out_dir = args.out
    if args.policy is not None:
        merged.policy_filter = args.policy
    merged.validate()
    return merged


def _one_run(payload: tuple) -> list[SegmentMetrics]:
    cfg, run_index = payload
    steps = build_schedule(cfg)
    return simulate_run(cfg, steps, run_index)


def execute(cfg: RunConfig, parallel: int = 1) -> list[list[SegmentMetrics]]:
    jobs = [(cfg, i) for i in range(cfg.n_runs)]
    if parallel > 1 and cfg.n_runs > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_one_run, jobs))
    return [_one_run(job) for job in jobs]


def summarize(segments_by_run: list[list[SegmentMetrics]]) -> str:
    lines = [
        f"{'run':>3} {'step':>4} {'policy':<12} {'param':>12} {'qps':>8} "
        f"{'p50 ms':>9} {'p99 ms':>9} {'err/s':>8}"
    ]
    for run_id, segments in enumerate(segments_by_run):
        for seg in segments:
            p50 = seg.latency.quantile(0.5)
            p99 = seg.latency.quantile(0.99)
            seconds = seg.measured_s or 1.0
            lines.append(
                f"{run_id:>3} {seg.step:>4} {seg.policy:<12} "
                f"{seg.param_name}={seg.param_value:<6.4g} "
                f"{seg.arrivals / seconds:>8.1f} "
                f"{(p50 or 0) / 1000:>9.2f} {(p99 or 0) / 1000:>9.2f} "
                f"{seg.errors / seconds:>8.2f}"
            )
    return "\n".join(lines)


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(cfg.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.resolved.json").write_text(cfg.to_json() + "\n")
        segments_by_run = execute(cfg, parallel=args.parallel)
        write_csv(out_dir / "metrics.csv", segments_by_run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3
    print(summarize(segments_by_run))
    print(f"wrote {out_dir / 'metrics.csv'}")
    return 0


def main() -> None:
    sys.exit(run())
