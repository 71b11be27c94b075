"""Command-line front end: scenario runs, batch reports, plot-data export.

Exit codes are a stable contract: 0 success, 1 validation error, 2 runtime
abort (a run ending in total camera failure, or an unexpected error).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .report import (
    execute_batch,
    emit_plot_data,
    export_trajectories,
    format_report,
    load_summaries,
    save_summaries,
)
from .scenario import ScenarioError, bundled_scenarios, load_scenario
from .sim import Termination, run_scenario

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_ABORT = 2


def _resolve_scenario(spec: str):
    """Accept either a path to a scenario file or a bundled scenario name."""
    path = Path(spec)
    if path.exists():
        return load_scenario(path)
    bundled = bundled_scenarios()
    if spec in bundled:
        return load_scenario(bundled[spec])
    known = ", ".join(sorted(bundled))
    raise ScenarioError(f"no scenario file {spec!r}; bundled scenarios: {known}")


def _cmd_run(args: argparse.Namespace) -> int:
    config = _resolve_scenario(args.scenario)
    base_seed = config.seed if args.seed is None else args.seed
    results = execute_batch(config, args.runs, base_seed)
    summaries = [summary for _, _, summary in results]
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for record, _, summary in results:
            export_trajectories(
                record, out / f"trajectories_{config.name}_seed{summary.seed}.csv"
            )
        save_summaries(summaries, config, base_seed, out / "summary.json")
    print(format_report(summaries))
    aborted = any(s.termination == Termination.ABORT.value for s in summaries)
    return EXIT_ABORT if aborted else EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    summary_path = Path(args.in_dir) / "summary.json"
    if not summary_path.exists():
        raise ScenarioError(f"no summary.json under {args.in_dir}")
    _, _, summaries = load_summaries(summary_path)
    print(format_report(summaries))
    return EXIT_OK


def _cmd_plotdata(args: argparse.Namespace) -> int:
    summary_path = Path(args.in_dir) / "summary.json"
    if not summary_path.exists():
        raise ScenarioError(f"no summary.json under {args.in_dir}")
    config, base_seed, summaries = load_summaries(summary_path)
    # Runs are deterministic, so records rebuild exactly from config + seeds.
    records = [record for record, _, _ in execute_batch(config, len(summaries), base_seed)]
    for path in emit_plot_data(records, args.out):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarmdock",
        description="Seeded simulator for a three-drone swarm landing on a moving platform",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--validate",
        metavar="FILE",
        help="check a scenario file against the schema and exit",
    )
    sub = parser.add_subparsers(dest="command")

    run_p = sub.add_parser("run", help="execute a scenario one or more times")
    run_p.add_argument("--scenario", required=True, help="scenario file or bundled name")
    run_p.add_argument("--seed", type=int, default=None, help="base seed (default: scenario seed)")
    run_p.add_argument("--runs", type=int, default=1, help="number of seeded runs")
    run_p.add_argument("--out", default=None, help="directory for trajectory CSVs and summary.json")

    report_p = sub.add_parser("report", help="print the aggregate table for saved runs")
    report_p.add_argument("--in", dest="in_dir", required=True, help="directory with summary.json")

    plot_p = sub.add_parser("plotdata", help="emit figure-ready CSVs for saved runs")
    plot_p.add_argument("--in", dest="in_dir", required=True, help="directory with summary.json")
    plot_p.add_argument("--out", required=True, help="directory for the plot CSVs")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.validate is not None:
            config = load_scenario(args.validate)
            print(f"{args.validate}: valid scenario {config.name!r}")
            return EXIT_OK
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "plotdata":
            return _cmd_plotdata(args)
        parser.print_help()
        return EXIT_OK
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # runtime failure, not a config problem
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
