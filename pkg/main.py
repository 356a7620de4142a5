from __future__ import annotations

import argparse
import logging
import shutil
import sys
from pathlib import Path
from typing import Sequence

from smbsim.app.services.database import DATABASE_PATH, initialize_database, print_database_status
from smbsim.app.services.errors import ConfigError
from smbsim.app.services.run_config import RunConfig, apply_overrides, load_config
from smbsim.app.services.run_registry import print_runs
from smbsim.app.services.runner import EXIT_CONFIG, print_run_summary, run


class SMBSimHelpFormatter(argparse.HelpFormatter):
    def __init__(self, prog: str) -> None:
        terminal_width = shutil.get_terminal_size(fallback=(100, 24)).columns
        safe_width = max(72, min(terminal_width, 120))

        super().__init__(
            prog,
            width=safe_width,
            max_help_position=34,
        )


class SMBSimArgumentParser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs) -> None:
        kwargs.setdefault("formatter_class", SMBSimHelpFormatter)
        super().__init__(*args, **kwargs)

    def error(self, message: str) -> None:
        # Usage errors share the config exit code.
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def add_override_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help="Override solver.seed.")
    parser.add_argument("--out", help="Override output.directory.")
    parser.add_argument("--paths", type=int, help="Override ensemble.n_paths.")
    parser.add_argument("--workers", type=int, help="Override ensemble.workers.")
    parser.add_argument("--no-record", action="store_true", help="Do not record the run in the registry.")


def build_parser() -> argparse.ArgumentParser:
    parser = SMBSimArgumentParser(
        prog="smbsim",
        description="Stochastic moving boundary simulator",
    )
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level for library messages.",
    )

    subparsers = parser.add_subparsers(dest="command", metavar="command")

    run_parser = subparsers.add_parser("run", help="Run the scenario described by a YAML config.")
    run_parser.add_argument("config", type=Path)
    add_override_arguments(run_parser)

    validate_parser = subparsers.add_parser(
        "validate",
        help="Check the coefficient assumptions of a config's model and kernel.",
    )
    validate_parser.add_argument("config", type=Path)
    add_override_arguments(validate_parser)

    bench_parser = subparsers.add_parser("bench", help="Run the quick benchmark suite.")
    bench_parser.add_argument("--out", default="output/bench", help="Directory for the results table.")
    bench_parser.add_argument("--format", default="csv", choices=["csv", "json"])
    bench_parser.add_argument("--full", action="store_true", help="Also run the acceptance-scale Stefan benchmark.")
    bench_parser.add_argument("--no-record", action="store_true", help="Do not record the run in the registry.")

    runs_parser = subparsers.add_parser("runs-list", help="List recorded runs, newest first.")
    runs_parser.add_argument("--limit", type=int)

    subparsers.add_parser("init-db", help="Create or update the run registry database.")
    subparsers.add_parser("db-status", help="Show registry path, tables, and settings.")

    return parser


def _load(args: argparse.Namespace, mode: str | None = None) -> RunConfig:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, seed=args.seed, out=args.out, paths=args.paths, workers=args.workers)

    if mode is not None:
        cfg = cfg.model_copy(update={"mode": mode})

    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    logging.captureWarnings(True)

    initialize_database()

    if args.command in ("run", "validate"):
        try:
            cfg = _load(args, mode="validate" if args.command == "validate" else None)
        except ConfigError as exc:
            print(f"Config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG

        outcome = run(
            cfg,
            config_path=args.config,
            database_path=None if args.no_record else DATABASE_PATH,
        )
        print_run_summary(outcome)
        return outcome.exit_code

    elif args.command == "bench":
        cfg = RunConfig.model_validate(
            {
                "mode": "benchmark",
                "output": {"directory": args.out, "format": args.format},
                "benchmark": {"full": args.full},
            }
        )
        outcome = run(cfg, database_path=None if args.no_record else DATABASE_PATH)
        print_run_summary(outcome)
        return outcome.exit_code

    elif args.command == "runs-list":
        print_runs(limit=args.limit)

    elif args.command == "init-db":
        print("Run registry initialized.")

    elif args.command == "db-status":
        print_database_status()

    else:
        parser.print_help()

    return 0


if __name__ == "__main__":
    sys.exit(main())
