import logging
from pathlib import Path
from typing import Optional

FILE_FORMAT = "%(asctime)s %(levelname)s %(message)s"
CONSOLE_FORMAT = "%(levelname)s  [%(name)s] %(message)s"


def setup_logger(
    name: str,
    log_file: Optional[Path] = None,
    level: int = logging.DEBUG,
    console_level: int = logging.INFO,
) -> logging.Logger:
    """Create or return the run logger.

    Console output stays at `console_level` so per-batch DEBUG records only reach the
    log file. Repeated calls (one per subcommand in tests) never stack handlers, and
    records do not propagate to the root logger.
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.propagate = False

    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        target = str(log_file.resolve())
        has_file_handler = any(
            isinstance(h, logging.FileHandler) and h.baseFilename == target
            for h in logger.handlers
        )
        if not has_file_handler:
            file_handler = logging.FileHandler(target)
            file_handler.setFormatter(logging.Formatter(FILE_FORMAT))
            file_handler.setLevel(level)
            logger.addHandler(file_handler)

    stream_handlers = [
        h
        for h in logger.handlers
        if isinstance(h, logging.StreamHandler) and not isinstance(h, logging.FileHandler)
    ]
    if stream_handlers:
        for handler in stream_handlers:
            handler.setLevel(console_level)
    else:
        stream_handler = logging.StreamHandler()
        stream_handler.setFormatter(logging.Formatter(CONSOLE_FORMAT))
        stream_handler.setLevel(console_level)
        logger.addHandler(stream_handler)

    return logger


def close_file_handlers(name: str) -> None:
    """Detach file handlers so the next run can log into another output directory."""
    logger = logging.getLogger(name)
    for handler in list(logger.handlers):
        if isinstance(handler, logging.FileHandler):
            handler.close()
            logger.removeHandler(handler)
