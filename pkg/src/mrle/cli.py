"""Command-line front end.

Subcommands:
  mrle sim --config <path> --out <dir> [--seed <u64>] [--reps <R>] [--workers <k>]
  mrle validate-config <path>
  mrle version

Exit codes: 0 success, 2 configuration error, 3 oracle-bound violation on a
replicate where the r-condition held, 4 runtime failure (any replicate
failed).  Wall-clock timings go to the console only; files on disk are
byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import __version__
from .errors import ConfigError
from .harness import emit_outputs, load_config, run_simulation

_MAX_SEED = 2**64


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mrle",
        description="Monte Carlo studies of regularized likelihood estimators",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("sim", help="run a simulation described by a JSON config")
    sim.add_argument("--config", required=True, help="path to the JSON config")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--seed", type=int, default=None, help="override config seed")
    sim.add_argument("--reps", type=int, default=None, help="override replicate count")
    sim.add_argument("--workers", type=int, default=1, help="thread count (default 1)")
    val = sub.add_parser("validate-config", help="check a config file and exit")
    val.add_argument("path", help="path to the JSON config")
    sub.add_parser("version", help="print the package version")
    return parser


def _summary_lines(report) -> list[str]:
    agg = report.aggregates
    config = report.config
    lines = [
        f"family {config.family}, {agg['replicates']} replicates, "
        f"policy {config.policy_kind}",
        f"kl mean {agg['kl_mean']:.6g}, median {agg['kl_median']:.6g}",
    ]
    if agg["bound_pass_rate"] is None:
        lines.append("oracle bound: no replicates satisfied the r-condition")
    else:
        lines.append(
            f"oracle bound pass rate {agg['bound_pass_rate']:.4f} "
            f"over {agg['bound_checked']} replicates with the r-condition"
        )
    if agg["coverage_rate"] is not None:
        lines.append(
            f"coverage {agg['coverage_rate']:.4f} vs guarantee "
            f"{agg['coverage_guarantee']:.4f} (slack {agg['coverage_slack']:.4f}): "
            + ("pass" if agg["coverage_pass"] else "FAIL")
        )
    if agg["failed"]:
        lines.append(f"{agg['failed']} replicate(s) FAILED")
        for rec in report.records:
            if rec.failed:
                lines.append(f"  replicate {rec.index}: {rec.error}")
    lines.append(f"wall time {report.wall_seconds:.2f}s")
    return lines


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "version":
        print(__version__)
        return 0
    if args.command == "validate-config":
        try:
            config = load_config(args.path)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        print(
            f"ok: {config.family}, dimensions {list(config.dimensions)}, "
            f"n {config.n}, {config.replicates} replicates, "
            f"gauge {config.gauge.variant}, policy {config.policy_kind}"
        )
        return 0
    try:
        config = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < _MAX_SEED:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            config = replace(config, seed=args.seed)
        if args.reps is not None:
            if args.reps < 1:
                raise ConfigError("--reps must be at least 1")
            config = replace(config, replicates=args.reps)
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        report = run_simulation(config, workers=args.workers)
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 4
    paths = emit_outputs(report, args.out)
    for line in _summary_lines(report):
        print(line)
    print(f"wrote {paths['csv']}, {paths['report']}, {len(paths['plots'])} plots")
    if report.aggregates["failed"]:
        return 4
    violated = any(
        rec.r_condition and not rec.bound_ok for rec in report.records
    )
    return 3 if violated else 0


def entrypoint() -> None:
    raise SystemExit(main())
