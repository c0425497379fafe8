import logging
import sys
from typing import Optional

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: str = "INFO", stream=None) -> None:
    """Install a single stream handler on the package logger"""
    logger = logging.getLogger("radsmith")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)

    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(handler)
    logger.setLevel(level.upper() if isinstance(level, str) else level)
    logger.propagate = False


def progress_enabled(quiet: bool = False, stream: Optional[object] = None) -> bool:
    """Progress bars only when attached to a terminal and not silenced"""
    if quiet:
        return False
    stream = stream or sys.stderr
    return bool(getattr(stream, "isatty", lambda: False)())
