"""Utility functions and helpers."""

from .logger import get_logger, setup_logging

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint  # isort: skip
from .config import RunConfig, load_config  # isort: skip

__all__ = [
    "setup_logging",
    "get_logger",
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "RunConfig",
    "load_config",
]
