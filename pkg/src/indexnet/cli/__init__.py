"""Command-line interface for indexnet."""

from .main import cli

__all__ = ["cli"]
