"""
Logging setup.
All modules log through the loguru logger; this installs the single stderr sink.
"""

import sys

from loguru import logger

from app.core.config import settings

LOG_FORMAT = "<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | {name}:{function} - {message}"


def setup_logging(level: str | None = None) -> None:
    """Replace the default sink with one stderr sink at the given level."""
    logger.remove()
    logger.add(sys.stderr, level=(level or settings.LOG_LEVEL).upper(), format=LOG_FORMAT)
