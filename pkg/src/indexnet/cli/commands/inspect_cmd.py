"""Inspect command implementation."""

from pathlib import Path
from typing import Optional

import click

from ...core.builder import build_model
from ...display.detailed import display_checkpoint_header
from ...display.tables import display_layers_table, display_manifest_table
from ...utils.config import load_config
from ...utils.logger import get_logger
from .._shared import console, handle_errors, model_from_checkpoint

logger = get_logger(__name__)


@click.command()
@click.option(
    "--checkpoint",
    "checkpoint_path",
    type=click.Path(exists=True, dir_okay=False),
    help="Checkpoint to describe",
)
@click.option("--config", "config_name", help="Run configuration to describe instead")
@click.pass_context
@handle_errors
def inspect(
    ctx: click.Context, checkpoint_path: Optional[str], config_name: Optional[str]
) -> None:
    """
    Show layer shapes, parameter counts and stored tensors.

    Examples:
        indexnet inspect --checkpoint runs/xor-fnn/checkpoints/final.ckpt
        indexnet inspect --config mnist-subset-lenet
    """
    if checkpoint_path is None and config_name is None:
        raise click.UsageError("either --checkpoint or --config is required")

    if checkpoint_path is not None:
        config, model, checkpoint = model_from_checkpoint(checkpoint_path)
        display_checkpoint_header(checkpoint, Path(checkpoint_path))
        display_manifest_table(checkpoint)
    else:
        config = load_config(config_name or "")
        model = build_model(config)

    display_layers_table(model.describe(), title=f"{config.name} ({model.family})")
    console.print(f"[bold]Parameters:[/bold] {model.parameter_count()}")
    logger.debug("Inspected %s", checkpoint_path or config_name)
