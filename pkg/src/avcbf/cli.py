"""Command-line entry point: run, compare, tune and list-scenarios."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .engine import Trajectory
from .scenarios import SCENARIOS
from .simkit import ConfigError, RunConfig, compare, export_csv, run, write_json, write_table

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4

log = logging.getLogger("avcbf")


def exit_code(trajectories: Iterable[Trajectory]) -> int:
    """Worst outcome across runs: a numeric abort outranks an infeasible stop."""
    code = EXIT_OK
    for traj in trajectories:
        if traj.termination == "numeric":
            code = max(code, EXIT_NUMERIC)
        elif traj.termination == "infeasible":
            code = max(code, EXIT_INFEASIBLE)
    return code


def _report(traj: Trajectory) -> None:
    s = traj.summary
    where = f" at t={s.first_infeasible_time:g}s" if s.first_infeasible_time is not None else ""
    log.info("%s: %s%s, %d rows, min b = %.6g", traj.label, s.termination, where, len(traj), s.min_b)
    if s.message:
        log.info("  %s", s.message)


def cmd_run(args: argparse.Namespace) -> int:
    config = RunConfig.load(args.config)
    traj, _ = run(config)
    export_csv(traj, args.out)
    _report(traj)
    return exit_code([traj])


def cmd_compare(args: argparse.Namespace) -> int:
    configs = [RunConfig.load(path) for path in args.configs]
    comparison, trajectories = compare(configs)
    out = Path(args.out)
    for label, traj in zip(comparison.labels, trajectories):
        export_csv(traj, out / f"{label}.csv")
        _report(traj)
    write_table(comparison.columns, comparison.table, out / "aligned.csv")
    write_json(comparison.to_dict(), out / "summary.json")
    return exit_code(trajectories)


def cmd_tune(args: argparse.Namespace) -> int:
    config = RunConfig.load(args.config)
    if config.tuning is None:
        raise ConfigError("tune needs a 'tuning' section in the config")
    traj, report = run(config)
    write_json(report.to_dict(), args.out)
    if args.csv:
        export_csv(traj, args.csv)
    log.info("tuning %s after %d window(s)", "converged" if report.converged else "did not converge",
             len(report.windows))
    _report(traj)
    return exit_code([traj])


def cmd_list(args: argparse.Namespace) -> int:
    for scenario, variants in SCENARIOS.items():
        print(f"{scenario}: {', '.join(variants)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avcbf", description=__doc__)
    parser.add_argument("-q", "--quiet", action="store_true", help="only report errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one config and write its trajectory CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="simulate several configs on a shared grid")
    p.add_argument("--configs", required=True, nargs="+")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("tune", help="tune auxiliary-input targets and write a JSON report")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="also write the tuned trajectory here")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("list-scenarios", help="print scenario ids and their variants")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("i/o error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
