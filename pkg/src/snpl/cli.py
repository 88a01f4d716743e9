"""Command-line entry points.

Exit codes: 0 success (for `run`: a non-baseline decision), 3 baseline
fallback from `run`, 2 malformed config or data.
"""

from __future__ import annotations

import argparse
import os
import sys

from .harness import (
    ConfigError,
    emit_bounds_scatter,
    load_config,
    read_dataset_csv,
    run_benchmark,
    run_single,
    write_json,
    write_gamma_grid_csv,
    write_report_csv,
)
from .synthetic import build_class


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snpl",
        description="Safe noisy policy learning: benchmark and certification runs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the replicated synthetic benchmark")
    sim.add_argument("--config", required=True, help="benchmark config JSON")
    sim.add_argument("--out", required=True, help="output directory")

    run = sub.add_parser("run", help="apply one method to a CSV dataset")
    run.add_argument("--data", required=True, help="dataset CSV")
    run.add_argument("--config", required=True, help="config JSON")
    run.add_argument("--out", required=True, help="trace JSON path")

    grid = sub.add_parser("gamma-grid", help="tabulate the stability level ratio")
    grid.add_argument("--out", required=True, help="output CSV path")
    grid.add_argument("--alpha-steps", type=int, default=50)
    grid.add_argument("--gamma-steps", type=int, default=80)

    scatter = sub.add_parser("bounds-scatter", help="per-policy bound coordinates")
    scatter.add_argument("--data", required=True, help="dataset CSV")
    scatter.add_argument("--config", required=True, help="config JSON")
    scatter.add_argument("--out", required=True, help="output CSV path")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "simulate":
            config = load_config(args.config)
            os.makedirs(args.out, exist_ok=True)
            report = run_benchmark(config, out_dir=args.out)
            write_report_csv(report, os.path.join(args.out, "report.csv"))
            write_json(report.to_json_dict(), os.path.join(args.out, "report.json"))
            return 0
        if args.command == "run":
            return run_single(args.data, args.config, args.out)
        if args.command == "gamma-grid":
            write_gamma_grid_csv(args.out, args.alpha_steps, args.gamma_steps)
            return 0
        if args.command == "bounds-scatter":
            config = load_config(args.config)
            dataset = read_dataset_csv(args.data, config)
            if dataset.covariates.shape[1] < 3:
                raise ConfigError("the built-in threshold policy class needs columns x1..x3")
            emit_bounds_scatter(dataset, build_class(config.grid_size), config, args.out)
            return 0
    except ValueError as err:  # ConfigError included; library validation too
        print(f"error: {err}", file=sys.stderr)
        return 2
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
