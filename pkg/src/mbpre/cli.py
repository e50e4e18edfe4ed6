"""
Command-line entry point.

    mbpre run --config <path> --out <dir> [--threads N] [--seed S]
    mbpre validate-config <path>

Exit codes: 0 every verdict passed, 1 a verdict failed, 2 configuration error,
3 regime mismatch, 4 any other mbpre error.
"""

import argparse
import logging
from typing import Optional, Sequence

from .config import load_config
from .exceptions import (
    ConfigError,
    MbpreError,
    RegimeMismatchError,
    UnsupportedFamilyError,
)
from .harness import run
from .logging import configure_logger

logger = logging.getLogger("mbpre")

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_CONFIG = 2
EXIT_REGIME = 3
EXIT_ERROR = 4


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    manifest = run(config, out_dir=args.out, threads=args.threads, seed=args.seed)
    failed = [v.name for v in manifest.verdicts if not v.passed]
    for name in failed:
        logger.warning(f"Verdict failed: {name}")
    total = len(manifest.verdicts)
    print(f"{manifest.suite}: {total - len(failed)}/{total} passed")
    return manifest.exit_code


def _cmd_validate(args: argparse.Namespace) -> int:
    config = load_config(args.path)
    print(
        f"{args.path}: valid {config.suite.value} config "
        f"(hash {config.config_hash[:12]})"
    )
    return EXIT_OK


def _console_handler() -> logging.Handler:
    for handler in logger.handlers:
        if isinstance(handler, logging.StreamHandler):
            return handler
    return logging.StreamHandler()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mbpre",
        description="Verification suites for branching processes in random environment",
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Level of the mbpre logger",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="Run the suite named in a config")
    p_run.add_argument("--config", required=True, help="Path to the experiment JSON")
    p_run.add_argument(
        "--out", default=None, help="Output directory (default: output.dir)"
    )
    p_run.add_argument(
        "--threads",
        type=int,
        default=None,
        help="Worker processes (default: MBPRE_THREADS or 1)",
    )
    p_run.add_argument(
        "--seed", type=int, default=None, help="Override the config seed"
    )
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate-config", help="Validate an experiment JSON")
    p_val.add_argument("path", help="Path to the experiment JSON")
    p_val.set_defaults(func=_cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logger(logger, level=args.log_level, handler=_console_handler())
    try:
        return int(args.func(args))
    except (ConfigError, UnsupportedFamilyError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except RegimeMismatchError as e:
        logger.error(f"Regime mismatch: {e}")
        return EXIT_REGIME
    except MbpreError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
