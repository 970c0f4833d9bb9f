"""
Main CLI entry point.
Builds the `recon` argument parser, applies global overrides to the settings
and maps toolkit errors to exit codes.
"""

import argparse
import sys
from typing import Sequence

from loguru import logger

from app.commands import COMMANDS
from app.core.config import settings
from app.core.errors import ReconError, UsageError
from app.core.logging import setup_logging


class CLIParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting."""

    def error(self, message: str):
        raise UsageError(f"{self.format_usage().strip()}\n{self.prog}: error: {message}")


def _global_flags() -> argparse.ArgumentParser:
    common = CLIParser(add_help=False)
    common.add_argument("--threads", type=int, help=f"worker threads (default {settings.THREADS})")
    common.add_argument("--seed", type=int, help=f"random seed (default {settings.SEED})")
    common.add_argument("--log-level", help=f"log level (default {settings.LOG_LEVEL})")
    return common


def build_parser() -> CLIParser:
    parser = CLIParser(prog="recon", description=settings.DESCRIPTION)
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=CLIParser)
    common = _global_flags()
    for command in COMMANDS:
        sub = subparsers.add_parser(command.NAME, help=command.HELP, parents=[common])
        command.configure(sub)
        sub.set_defaults(handler=command.handle)
    return parser


def apply_overrides(args: argparse.Namespace) -> None:
    """Copy global flags onto the settings singleton."""
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        settings.THREADS = args.threads
    if args.seed is not None:
        settings.SEED = args.seed
    if args.log_level is not None:
        settings.LOG_LEVEL = args.log_level.upper()


def run(argv: Sequence[str] | None = None) -> int:
    """
    Parse `argv`, run the chosen command and return its exit code.

    - 0 on success
    - 1 for usage errors (bad flags, invalid config documents)
    - 2 for runtime failures
    """
    try:
        args = build_parser().parse_args(argv)
        apply_overrides(args)
        setup_logging(settings.LOG_LEVEL)

        # Log the resolved configuration
        flags = {k: v for k, v in vars(args).items() if k not in ("handler", "command")}
        logger.info(f"{args.command} {flags} | threads={settings.THREADS} seed={settings.SEED} "
                    f"precision={settings.PRECISION}")

        return args.handler(args)
    except UsageError as exc:
        sys.stderr.write(exc.detail + "\n")
        return exc.exit_code
    except ReconError as exc:
        sys.stderr.write(f"error: {exc.detail}\n")
        return exc.exit_code
    except SystemExit as exc:
        # --help and --version
        return exc.code if isinstance(exc.code, int) else 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
