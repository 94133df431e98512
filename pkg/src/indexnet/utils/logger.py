import logging
from typing import Dict, Optional

from rich.console import Console
from rich.logging import RichHandler

FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

# The gradient checker logs one line per perturbed entry.
CHATTY_LOGGERS: Dict[str, int] = {"indexnet.core.gradcheck": logging.WARNING}


def setup_logging(verbose: bool = False, log_file: Optional[str] = None) -> None:
    """
    Configure logging for the command line.

    Console records go through rich on stderr so they never mix with tables
    on stdout. The optional log file always receives DEBUG records in the
    plain "YYYY-MM-DD HH:MM:SS - module.name - LEVEL - message" layout.

    Args:
        verbose: DEBUG on the console when True, INFO otherwise
        log_file: Optional path of a persistent log

    Example:
        setup_logging(verbose=True, log_file="indexnet-train.log")
    """
    level = logging.DEBUG if verbose else logging.INFO

    console_handler = RichHandler(
        console=Console(stderr=True),
        level=level,
        show_path=verbose,
        log_time_format=f"[{DATE_FORMAT}]",
        rich_tracebacks=verbose,
    )

    root = logging.getLogger()
    # One call per CLI invocation; a second call replaces the handlers.
    for handler in root.handlers[:]:
        root.removeHandler(handler)
        handler.close()
    root.setLevel(logging.DEBUG if log_file else level)
    root.addHandler(console_handler)

    if log_file:
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(FILE_FORMAT, datefmt=DATE_FORMAT))
        root.addHandler(file_handler)

    for name, quiet_level in CHATTY_LOGGERS.items():
        logging.getLogger(name).setLevel(logging.NOTSET if verbose else quiet_level)


def get_logger(name: str) -> logging.Logger:
    """
    Logger for one module; configuration comes from setup_logging().

    Usage:
        logger = get_logger(__name__)
        logger.info("Epoch %d finished", epoch)
    """
    return logging.getLogger(name)
