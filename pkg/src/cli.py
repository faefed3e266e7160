#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Command line entry point for simulations, bounds and certification runs."""
import argparse
import logging
import sys
from pathlib import Path

import pandas as pd

from core.models import PointPattern, RngStream
from literals import CONFIG_PATH, EXPERIMENTS_DIR
from managers.config import ConfigValidationError, ExperimentConfig, load_config, with_overrides
from managers.experiment import (
    ExperimentManager,
    draw_patterns,
    retention_field,
    sampling_window,
)
from managers.thinning import thin
from workload import ReportWorkload

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thinning-bounds",
        description="Poisson approximation bounds for dependent thinnings, with empirical certificates.",
    )
    parser.add_argument("--config", type=str, default=CONFIG_PATH, help="Experiment YAML file.")
    parser.add_argument(
        "--experiment", type=str, default=None, help=f"Canned experiment name under {EXPERIMENTS_DIR}/."
    )
    parser.add_argument("--seed", type=int, default=None, help="Master seed override.")
    parser.add_argument("--replicates", type=int, default=None, help="Replicate count override.")
    parser.add_argument("--out", type=str, default=None, help="Output directory override.")
    parser.add_argument(
        "--log-level", type=str, default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"]
    )

    commands = parser.add_subparsers(dest="command", required=True)
    simulate_parser = commands.add_parser(
        "simulate", help="Draw unthinned patterns on the sampling window."
    )
    simulate_parser.add_argument("--count", type=int, default=1, help="Number of patterns.")
    thin_parser = commands.add_parser("thin", help="Thin patterns with the configured field.")
    thin_parser.add_argument("--input", type=str, default=None, help="Pattern CSV to thin.")
    thin_parser.add_argument(
        "--count", type=int, default=1, help="Patterns to simulate without --input."
    )
    commands.add_parser("summaries", help="Estimate K, G and G2 from replicates.")
    commands.add_parser("bound", help="Evaluate the bound of every sweep point.")
    commands.add_parser("certify", help="Certify bounds against empirical lower bounds.")
    commands.add_parser("experiment", help="Run the experiment kind the config names.")

    return parser


def _load(args: argparse.Namespace, kind: str | None = None) -> ExperimentConfig:
    path = Path(EXPERIMENTS_DIR) / f"{args.experiment}.yaml" if args.experiment else Path(args.config)
    config = load_config(path)
    return with_overrides(
        config,
        seed=args.seed,
        replicates=args.replicates,
        output=args.out,
        log_level=args.log_level,
        kind=kind,
    )


def _simulate(args: argparse.Namespace, config: ExperimentConfig) -> int:
    count = args.count
    patterns = draw_patterns(config, count, RngStream(config.seed))
    frame = pd.concat(
        [p.to_frame().assign(replicate=i) for i, p in enumerate(patterns)], ignore_index=True
    )
    workload = ReportWorkload(config.output)
    workload.write_frame(frame, workload.paths.root / "patterns.csv")
    logger.info(f"Wrote {count} patterns with {len(frame)} points in total")

    return 0


def _thin(args: argparse.Namespace, config: ExperimentConfig) -> int:
    window = sampling_window(config)
    stream = RngStream(config.seed)
    if args.input:
        frame = pd.read_csv(args.input)
        if "replicate" not in frame:
            frame["replicate"] = 0
        patterns = [
            PointPattern.from_frame(group, window) for _, group in frame.groupby("replicate")
        ]
    else:
        patterns = draw_patterns(config, args.count, stream.substream(0))

    field = retention_field(config)
    generator = stream.substream(1).generator()
    frames = []
    for i, pattern in enumerate(patterns):
        outcome = thin(pattern, field.realize(pattern, generator), generator)
        frames.append(outcome.to_frame().assign(replicate=i))

    workload = ReportWorkload(config.output)
    workload.write_frame(pd.concat(frames, ignore_index=True), workload.paths.root / "thinned.csv")

    return 0


def _bound(config: ExperimentConfig) -> int:
    reports = ExperimentManager(config).run_bounds()
    for index, report in enumerate(reports):
        if report is None:
            continue
        logger.info(
            f"Point {index}: {report.provenance} TV {report.total_tv:.6g}, d2 {report.total_d2:.6g}"
        )

    return 0 if all(report is not None for report in reports) else 1


def _run(config: ExperimentConfig) -> int:
    summary = ExperimentManager(config).run_experiment()
    failed = [r for r in summary.results if not r.passed]
    if failed:
        print(
            f"{len(failed)} of {len(summary.results)} sweep points did not pass: "
            + ", ".join(f"{r.index} ({r.status.cause or r.verdict.value.label})" for r in failed),
            file=sys.stderr,
        )
        return 1

    print(f"{config.name}: {summary.verdict.value.label} ({len(summary.results)} points)")
    return 0


def main(argv: list[str] | None = None) -> int:
    """Runs one subcommand; exit code 0 iff everything passed."""
    args = _parser().parse_args(argv)
    kind = {"summaries": "summaries", "certify": "certify"}.get(args.command)

    try:
        config = _load(args, kind=kind)
    except ConfigValidationError as e:
        print("Invalid configuration:", file=sys.stderr)
        for issue in e.issues:
            print(f"  {issue}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"Configuration not found: {e.filename}", file=sys.stderr)
        return 2

    logging.basicConfig(level=config.log_level, format=LOG_FORMAT)

    if args.command == "simulate":
        return _simulate(args, config)

    if args.command == "thin":
        return _thin(args, config)

    if args.command == "bound":
        return _bound(config)

    return _run(config)


if __name__ == "__main__":
    raise SystemExit(main())
