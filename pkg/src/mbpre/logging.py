"""
Logging configuration for mbpre.
"""

import logging
from typing import Optional, Union

# Default format for log messages
DEFAULT_LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class MbpreFormatter(logging.Formatter):
    """Formatter used by the CLI and by configure_logger."""

    def __init__(self, fmt: Optional[str] = None):
        super().__init__(fmt=fmt or DEFAULT_LOG_FORMAT)


def configure_logger(
    logger: logging.Logger,
    level: Union[int, str] = logging.INFO,
    handler: Optional[logging.Handler] = None,
    log_format: Optional[str] = None,
) -> logging.Logger:
    """
    Attach a handler to ``logger`` and set its level.

    Level names are case-insensitive.  A handler created here gets the same
    level as the logger; a handler passed in keeps its own.  The handler is
    added at most once, so repeated calls are harmless.

    Raises:
        ValueError: If ``level`` is an unknown level name
    """
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            raise ValueError(f"Unknown log level: {level}")

    logger.setLevel(level)

    if handler is None:
        handler = logging.StreamHandler()
        handler.setLevel(level)

    # An explicit format wins over whatever the handler already carries
    if log_format is not None:
        handler.setFormatter(MbpreFormatter(log_format))
    elif not handler.formatter:
        handler.setFormatter(MbpreFormatter())

    if handler not in logger.handlers:
        logger.addHandler(handler)

    return logger