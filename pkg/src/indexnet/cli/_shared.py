"""Shared helpers for CLI commands."""

import functools
from typing import Any, Callable, Optional, Tuple, TypeVar

import click
import numpy as np
from rich.console import Console

from ..core.builder import build_model, load_datasets, load_raw_dataset
from ..core.data_io import Dataset, apply_centering
from ..core.errors import ExitCode, IndexNetError
from ..core.model import Network
from ..utils.checkpoint import Checkpoint, load_checkpoint
from ..utils.config import RunConfig
from ..utils.logger import get_logger

logger = get_logger(__name__)
console = Console()

F = TypeVar("F", bound=Callable[..., Any])


def handle_errors(command: F) -> F:
    """
    Turn library errors into a one-line message and the family's exit code.

    Tracebacks are only logged, at DEBUG.
    """

    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return command(*args, **kwargs)
        except IndexNetError as e:
            logger.error("%s: %s", type(e).__name__, e)
            logger.debug("Traceback", exc_info=True)
            console.print(f"[red]Error: {e}[/red]")
            raise click.exceptions.Exit(int(e.exit_code)) from e
        except FileNotFoundError as e:
            logger.error("Missing file: %s", e)
            console.print(f"[red]Error: {e}[/red]")
            raise click.exceptions.Exit(int(ExitCode.DATA)) from e

    return wrapper  # type: ignore[return-value]


def model_from_checkpoint(path: str) -> Tuple[RunConfig, Network, Checkpoint]:
    """Rebuild the configured network and load the checkpointed state into it."""
    checkpoint = load_checkpoint(path)
    config = RunConfig.from_dict(checkpoint.config)
    model = build_model(config)
    model.load_state(checkpoint.group("model"), checkpoint.meta.get("bn_counters", {}))
    logger.info(
        "Loaded %s model from %s (epoch %s)",
        model.family,
        path,
        checkpoint.meta.get("epoch"),
    )
    return config, model, checkpoint


def evaluation_data(
    config: RunConfig, checkpoint: Checkpoint, data: Optional[str]
) -> Dataset:
    """
    Data an evaluation runs on.

    With ``data`` the whole file is used; otherwise the run's evaluation split
    (or its training set when it had none). Centering always uses the
    checkpointed training mean.
    """
    mean = checkpoint.arrays.get("data.mean")
    if data is not None:
        return apply_centering(load_raw_dataset(config, data), mean)
    train, held_out = load_datasets(config)
    chosen = held_out if held_out is not None else train
    recomputed = train.mean
    if mean is not None and recomputed is not None:
        if not np.array_equal(mean, recomputed):
            logger.warning("Checkpointed centering mean differs from the recomputed")
    return chosen
