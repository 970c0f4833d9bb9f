"""
grad-check: run the finite-difference suite; nonzero exit on any failure.
"""

import argparse

from loguru import logger

from app.commands.common import parse_kinds
from app.core.config import settings
from app.services.gradients import full_suite

NAME = "grad-check"
HELP = "verify every differentiable op against central differences"


def configure(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--double", action="store_true", help="double precision with tight tolerances")
    parser.add_argument("--kinds", help="comma-separated op kinds to check (default: all)")


def handle(args: argparse.Namespace) -> int:
    kinds = parse_kinds(args.kinds) if args.kinds else None
    results = full_suite(double=args.double, seed=settings.SEED, kinds=kinds)
    failed = [r.kind for r in results if not r.passed]
    if failed:
        logger.error(f"{len(failed)} of {len(results)} gradient checks failed: {', '.join(failed)}")
        return 2
    logger.info(f"all {len(results)} gradient checks passed")
    return 0
