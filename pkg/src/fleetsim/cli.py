"""Command-line entry points: validate a config, run it, or sweep patience."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .experiment import ConfigError, emit_report, load_config, run_experiment, sweep_patience


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fleetsim",
        description="Zone-graph repositioning experiments: simulator, baselines, masked deep-Q agent.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="path to the YAML experiment config")
    common.add_argument("--output-dir", default=None, help="override the config's output directory")
    common.add_argument("--seed", type=int, default=None, help="run a single seed instead of the config's list")

    sub.add_parser("validate", parents=[common], help="check the config and inputs, run nothing")
    sub.add_parser("run", parents=[common], help="run every (policy, patience, seed) cell")
    sweep = sub.add_parser("sweep", parents=[common], help="patience sweep with paired seeds")
    sweep.add_argument(
        "--patience",
        default=None,
        help="comma-separated patience minutes (defaults to the config's list)",
    )
    return parser


def _apply_overrides(cfg, args):
    if args.output_dir is not None:
        cfg = replace(cfg, output_dir=args.output_dir)
    if args.seed is not None:
        cfg = replace(cfg, seeds=[args.seed])
    return cfg


def _print_report(report) -> None:
    for row in report.aggregates():
        fr = row["failure_rate_mean"]
        wait = row["avg_waiting_time_mean"]
        idle = row["avg_idle_search_time_mean"]
        print(
            f"{row['policy']:>13}  patience={row['patience']:<3d} seeds={row['seeds']} "
            f"FR={'n/a' if fr is None else f'{fr:.4f}'} "
            f"wait={'n/a' if wait is None else f'{wait:.3f}'} "
            f"idle={'n/a' if idle is None else f'{idle:.3f}'}"
        )


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        if args.command == "validate":
            print(f"config ok: {len(cfg.policies)} policy(ies), "
                  f"{len(cfg.patience)} patience value(s), {len(cfg.seeds)} seed(s), "
                  f"{cfg.net.num_zones} zones")
            return 0
        if args.command == "run":
            report = run_experiment(cfg)
        else:
            patience = cfg.patience
            if args.patience is not None:
                patience = [int(p) for p in args.patience.split(",") if p.strip()]
            report = sweep_patience(cfg, patience)
        _print_report(report)
        if cfg.output_dir is None:
            emit_report(report, ".")
            print("report written to ./runs.csv and ./aggregate.csv")
        else:
            print(f"report written under {cfg.output_dir}")
        return 0
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
