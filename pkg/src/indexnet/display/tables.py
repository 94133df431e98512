"""Table display utilities for reports, manifests and metrics."""

from typing import Dict, List, Sequence

from rich.console import Console
from rich.table import Table

from ..core.gradcheck import GradCheckReport
from ..core.trainer import EpochMetrics
from ..utils.checkpoint import Checkpoint

console = Console()


def display_gradcheck_table(report: GradCheckReport, limit: int = 15) -> None:
    """
    Display the worst gradient-check entries first.

    Args:
        report: Finished gradient check
        limit: Number of entries to list

    Table Columns:
        - Parameter: Tensor name and entry index (cyan)
        - Analytic / Numeric: Both gradient values
        - Rel. Error: Colored green when within the threshold, red otherwise
    """
    verdict = "[green]PASS[/green]" if report.passed else "[red]FAIL[/red]"
    table = Table(
        title=(
            f"Gradient check {verdict} "
            f"(threshold {report.threshold:g}, step {report.step:g})"
        )
    )
    table.add_column("Parameter", style="cyan", no_wrap=True)
    table.add_column("Analytic", justify="right")
    table.add_column("Numeric", justify="right")
    table.add_column("Rel. Error", justify="right", style="bold")

    for entry in report.worst(limit):
        color = "green" if entry.relative_error <= report.threshold else "red"
        table.add_row(
            f"{entry.parameter}[{entry.index_label}]",
            f"{entry.analytic:.8e}",
            f"{entry.numeric:.8e}",
            f"[{color}]{entry.relative_error:.2e}[/{color}]",
        )
    console.print(table)
    console.print(
        f"[dim]{len(report.checked)} entries checked, "
        f"{len(report.skipped)} skipped at kinks, "
        f"max relative error {report.max_error:.3e}[/dim]"
    )


def display_manifest_table(checkpoint: Checkpoint) -> None:
    """Display every tensor stored in a checkpoint with its shape and offset."""
    table = Table(title=f"Checkpoint tensors ({len(checkpoint.arrays)})")
    table.add_column("Name", style="cyan", no_wrap=True)
    table.add_column("Shape", style="magenta")
    table.add_column("Entries", justify="right", style="yellow")
    table.add_column("Offset", justify="right", style="dim")

    for row in checkpoint.manifest():
        shape = "x".join(str(v) for v in row["shape"]) or "scalar"
        table.add_row(row["name"], shape, str(row["bytes"] // 8), str(row["offset"]))
    console.print(table)


LAYER_COLUMNS = ("layer", "kind", "shape", "detail")


def display_layers_table(
    rows: Sequence[Dict[str, str]], title: str = "Layers"
) -> None:
    table = Table(title=title)
    for column in LAYER_COLUMNS:
        style = "cyan" if column == "layer" else None
        table.add_column(column.capitalize(), style=style)
    for row in rows:
        table.add_row(*(row.get(column, "") for column in LAYER_COLUMNS))
    console.print(table)


def display_metrics_table(history: List[EpochMetrics], last: int = 10) -> None:
    """Display the last ``last`` epochs of a training run."""
    table = Table(title="Training metrics")
    table.add_column("Epoch", justify="right", style="cyan")
    table.add_column("Train loss", justify="right")
    table.add_column("Eval loss", justify="right")
    table.add_column("Accuracy", justify="right", style="green")
    table.add_column("LR", justify="right", style="dim")
    for m in history[-last:]:
        acc = "-" if m.accuracy != m.accuracy else f"{m.accuracy:.4f}"
        table.add_row(
            str(m.epoch),
            f"{m.train_loss:.6g}",
            f"{m.eval_loss:.6g}",
            acc,
            f"{m.lr:.3g}",
        )
    console.print(table)
