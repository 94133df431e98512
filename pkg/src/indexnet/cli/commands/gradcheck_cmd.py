"""Gradcheck command implementation."""

from pathlib import Path
from typing import Optional

import click
from rich.progress import Progress, SpinnerColumn, TextColumn

from ...core.builder import build_model, load_datasets
from ...core.errors import ExitCode
from ...core.gradcheck import check
from ...display.tables import display_gradcheck_table
from ...utils.config import load_config
from ...utils.logger import get_logger
from .._shared import console, handle_errors

logger = get_logger(__name__)


@click.command()
@click.option(
    "--config",
    "config_name",
    required=True,
    help="Run configuration file or built-in name",
)
@click.option("--threshold", type=float, help="Largest relative error that passes")
@click.option("--step", type=float, help="Finite-difference step")
@click.option("--batch-size", type=int, help="Samples in the checked batch")
@click.option("--seed", type=int, help="Override the configured seed")
@click.option(
    "--report",
    "report_dir",
    type=click.Path(file_okay=False),
    help="Write gradcheck.txt and gradcheck.csv into this directory",
)
@click.pass_context
@handle_errors
def gradcheck(
    ctx: click.Context,
    config_name: str,
    threshold: Optional[float],
    step: Optional[float],
    batch_size: Optional[int],
    seed: Optional[int],
    report_dir: Optional[str],
) -> None:
    """
    Compare analytic gradients with central finite differences.

    Builds the configured network and checks every parameter entry on a
    small batch drawn from the configured data. Exits with status 6 when
    any non-skipped entry exceeds the threshold.

    Examples:
        indexnet gradcheck --config xor-fnn
        indexnet gradcheck --config sine-rnn --threshold 1e-6 --report reports/
    """
    config = load_config(config_name, seed=seed)
    settings = config.gradcheck
    size = batch_size or settings.batch_size
    if config.uses_batch_norm():
        size = max(size, 2)
    model = build_model(config)
    train, _ = load_datasets(config)
    inputs, targets = train.inputs[:size], train.targets[:size]

    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        console=console,
    ) as progress:
        progress.add_task(
            f"Checking {model.parameter_count()} parameters "
            f"on {len(inputs)} samples...",
            total=None,
        )
        report = check(
            model,
            inputs,
            targets,
            step=step or settings.step,
            threshold=threshold or settings.threshold,
        )

    display_gradcheck_table(report)
    if report_dir is not None:
        folder = Path(report_dir)
        folder.mkdir(parents=True, exist_ok=True)
        report.write_text(folder / "gradcheck.txt")
        report.write_csv(folder / "gradcheck.csv")
        console.print(f"[green]Report written to {folder}[/green]")

    if not report.passed:
        logger.error(
            "Gradient check failed: %d entries over threshold", len(report.failures)
        )
        raise click.exceptions.Exit(int(ExitCode.GRADCHECK))
