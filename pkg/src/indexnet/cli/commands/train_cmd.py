"""Train command implementation."""

from pathlib import Path
from typing import Optional

import click
from rich.progress import Progress, SpinnerColumn, TextColumn

from ...core.trainer import EpochMetrics, Trainer
from ...display.detailed import display_training_summary
from ...display.tables import display_metrics_table
from ...utils.config import load_config
from ...utils.logger import get_logger
from .._shared import console, handle_errors

logger = get_logger(__name__)


@click.command()
@click.option("--config", "config_name", help="Run configuration file or built-in name")
@click.option("--seed", type=int, help="Override the configured seed")
@click.option(
    "--out", "out_dir", type=click.Path(file_okay=False), help="Output directory"
)
@click.option("--epochs", type=int, help="Override the configured number of epochs")
@click.option(
    "--resume",
    type=click.Path(exists=True, dir_okay=False),
    help="Continue a run from one of its checkpoints",
)
@click.pass_context
@handle_errors
def train(
    ctx: click.Context,
    config_name: Optional[str],
    seed: Optional[int],
    out_dir: Optional[str],
    epochs: Optional[int],
    resume: Optional[str],
) -> None:
    """
    Train a network from a run configuration.

    Writes metrics.csv (epoch, train_loss, eval_loss, accuracy, lr), the
    resolved config.yaml and checkpoints into the output directory
    (default: runs/<config name>). Delimited datasets hold one sample per
    line, comma-separated, with the target in the last column(s).

    Examples:
        indexnet train --config xor-fnn
        indexnet train --config my-run.yaml --seed 3 --out runs/seed3
        indexnet train --resume runs/xor-fnn/checkpoints/epoch-0500.ckpt
    """
    if resume is None and config_name is None:
        raise click.UsageError("either --config or --resume is required")

    if resume is not None:
        target = Path(out_dir) if out_dir else Path(resume).parent.parent
        trainer = Trainer.resume(Path(resume), out_dir=target)
    else:
        config = load_config(config_name or "", seed=seed)
        target = Path(out_dir) if out_dir else Path("runs") / config.name
        trainer = Trainer(config, out_dir=target)

    total = epochs if epochs is not None else trainer.config.training.epochs
    logger.info(
        "Training '%s' for %d epochs into %s", trainer.config.name, total, target
    )

    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        console=console,
    ) as progress:
        task = progress.add_task(f"Training {trainer.config.name}...", total=None)

        def on_epoch(metrics: EpochMetrics) -> None:
            progress.update(
                task,
                description=(
                    f"Epoch {metrics.epoch}/{total} loss {metrics.train_loss:.4g}"
                ),
            )

        summary = trainer.fit(total, on_epoch=on_epoch)

    display_metrics_table(summary.history)
    display_training_summary(summary, target)
