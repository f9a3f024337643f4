from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Iterable, List

from .cbf import invariance_audit
from .config import ExperimentConfig, config_load, resolve_config
from .driver import run_experiment
from .envs import build_env
from .errors import ConfigError, RlCbfError, UsageError
from .export_csv import aggregate, read_steps, write_aggregate
from .selftest import SUITES, run_selftest

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_CHECK_FAILED = 4
EXIT_MISSING_FILE = 5


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rlcbf", description="Safe actor-critic learning with barrier-function QP filters")
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run_p = sub.add_parser("run", help="Train one run per seed")
    run_p.add_argument("--config", default="config.yaml", help="YAML file or preset name under configs/")
    run_p.add_argument("--seed", type=int, action="append", help="Seed override; can repeat")
    run_p.add_argument("--episodes", type=int, help="Episode count override")
    run_p.add_argument("--workers", type=int, help="Worker threads for independent seeds")
    run_p.add_argument("--out", help="Output directory (default: out_dir from the config)")
    run_p.add_argument("--verbose", action="store_true", help="Also write steps_<episode>.csv files")

    audit_p = sub.add_parser("audit", help="Replay step CSVs through the barrier-step audit")
    audit_p.add_argument("steps", nargs="+", help="steps_<episode>.csv files")
    audit_p.add_argument("--config", default="config.yaml")
    audit_p.add_argument("--k-delta", type=float, help="Band width for coverage (default: gp.k_delta)")

    self_p = sub.add_parser("selftest", help="Run the GP, QP and gradient oracle suites")
    self_p.add_argument("--suite", action="append", choices=sorted(SUITES))
    self_p.add_argument("--seed", type=int, default=0)

    agg_p = sub.add_parser("aggregate", help="Merge per-seed episodes.csv files")
    agg_p.add_argument("inputs", nargs="+", help="episodes.csv files or run directories")
    agg_p.add_argument("--out", default="aggregate.csv")
    return parser


def load_experiment(name: str) -> ExperimentConfig:
    return config_load(resolve_config(name))


def cmd_run(args: argparse.Namespace) -> int:
    config = load_experiment(args.config)
    overrides = {}
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.verbose:
        overrides["verbose"] = True
    if args.seed:
        overrides["seeds"] = list(args.seed)
    config = replace(config, **overrides)
    if config.episodes < 1 or config.workers < 1:
        raise ConfigError([f"episodes and workers must be at least 1, got {config.episodes} and {config.workers}"])
    out_root = Path(args.out or config.out_dir)
    results = run_experiment(config, out_root)
    unsafe = sum(log.unsafe for result in results for log in result.logs)
    LOGGER.info("Finished %d seed(s) in %s; %d unsafe episode(s)", len(results), out_root, unsafe)
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    config = load_experiment(args.config)
    env = build_env(config.env, config.pendulum, config.car, config.barriers)
    k_delta = config.gp.k_delta if args.k_delta is None else args.k_delta
    failed = False
    for path in args.steps:
        if not Path(path).is_file():
            raise FileNotFoundError(path)
        report = invariance_audit(read_steps(path), env.barriers(), k_delta)
        coverage = "n/a" if report.coverage is None else f"{report.coverage:.3f}"
        LOGGER.info(
            "%s: %d steps, %d violations (%d certified), %d exits, max excursion %.3g, eps_max %.3g, bound %.3g, coverage %s",
            path, report.n_steps, len(report.violations), len(report.certified_violations), len(report.exits),
            report.max_excursion, report.eps_max, report.excursion_bound, coverage,
        )
        for row in report.certified_violations[:10]:
            LOGGER.error("  t=%d barrier %d: h(s') = %.6g < %.6g", row.t, row.barrier, row.lhs, row.rhs)
        failed = failed or bool(report.certified_violations)
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    results = run_selftest(args.suite, seed=args.seed)
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


def episode_files(inputs: Iterable[str]) -> List[Path]:
    files: List[Path] = []
    for item in inputs:
        path = Path(item)
        if path.is_dir():
            found = sorted(path.glob("seed_*/episodes.csv")) or sorted(path.glob("episodes.csv"))
            if not found:
                raise FileNotFoundError(f"no episodes.csv under {path}")
            files.extend(found)
        elif path.is_file():
            files.append(path)
        else:
            raise FileNotFoundError(item)
    return files


def cmd_aggregate(args: argparse.Namespace) -> int:
    frame = aggregate(episode_files(args.inputs))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_aggregate(args.out, frame)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "audit": cmd_audit, "selftest": cmd_selftest, "aggregate": cmd_aggregate}


def run(argv: Iterable[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE

    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        for problem in exc.problems:
            LOGGER.error("config: %s", problem)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        LOGGER.error("missing file: %s", exc)
        return EXIT_MISSING_FILE
    except RlCbfError as exc:
        LOGGER.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(run())
