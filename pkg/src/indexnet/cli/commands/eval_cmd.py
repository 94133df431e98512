"""Eval command implementation."""

from typing import Optional

import click

from ...core.trainer import evaluate
from ...display.detailed import display_evaluation
from ...utils.logger import get_logger
from .._shared import evaluation_data, handle_errors, model_from_checkpoint

logger = get_logger(__name__)


@click.command(name="eval")
@click.option(
    "--checkpoint",
    "checkpoint_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False),
    help="Checkpoint to evaluate",
)
@click.option(
    "--data", type=click.Path(exists=True, dir_okay=False), help="Dataset file"
)
@click.pass_context
@handle_errors
def evaluate_cmd(ctx: click.Context, checkpoint_path: str, data: Optional[str]) -> None:
    """
    Evaluate a checkpoint in eval mode (running batch-norm statistics).

    Without --data the run's own evaluation split is used (its training set
    when the run had none), so the printed loss equals the last eval_loss in
    the run's metrics.

    Examples:
        indexnet eval --checkpoint runs/xor-fnn/checkpoints/final.ckpt
        indexnet eval --checkpoint final.ckpt --data test.csv
    """
    config, model, checkpoint = model_from_checkpoint(checkpoint_path)
    dataset = evaluation_data(config, checkpoint, data)
    loss_value, acc = evaluate(model, dataset)
    logger.info(
        "Evaluation of %s: loss=%r accuracy=%s", checkpoint_path, loss_value, acc
    )
    display_evaluation(config.name, loss_value, acc, len(dataset))
