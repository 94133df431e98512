"""Panel displays for training summaries, evaluation results and checkpoints."""

import math
from pathlib import Path
from typing import Optional

from rich.console import Console
from rich.panel import Panel

from ..core.trainer import TrainingSummary
from ..utils.checkpoint import Checkpoint

console = Console()


def _fmt_accuracy(value: float) -> str:
    return "n/a (regression)" if math.isnan(value) else f"{value:.4f}"


def display_training_summary(
    summary: TrainingSummary, out_dir: Optional[Path]
) -> None:
    """Display the final epoch of a run and where its files went."""
    final = summary.final
    if final is None:
        console.print("[yellow]No epochs were run.[/yellow]")
        return
    details = f"""[bold]{summary.name}[/bold]
Epochs: {final.epoch}
Train loss: {final.train_loss:.6g}
Eval loss: {final.eval_loss:.6g}
Accuracy: {_fmt_accuracy(final.accuracy)}
Learning rate: {final.lr:.3g}"""
    if out_dir is not None:
        details += f"\n\nOutput: {out_dir}"
        if summary.metrics_path is not None:
            details += f"\nMetrics: {summary.metrics_path.name}"
        if summary.checkpoints:
            last = summary.checkpoints[-1].name
            details += f"\nCheckpoints: {len(summary.checkpoints)} (last {last})"
    console.print(
        Panel(
            details,
            title="Training complete",
            border_style="green",
            title_align="left",
        )
    )


def display_evaluation(
    name: str, loss_value: float, accuracy: float, samples: int
) -> None:
    details = f"""[bold]{name}[/bold]
Samples: {samples}
Loss: {loss_value!r}
Accuracy: {_fmt_accuracy(accuracy)}"""
    console.print(
        Panel(details, title="Evaluation", border_style="blue", title_align="left")
    )


def display_checkpoint_header(checkpoint: Checkpoint, path: Path) -> None:
    """Display the metadata block of a checkpoint."""
    meta = checkpoint.meta
    config = checkpoint.config
    optimizer = config.get("optimizer", {}).get("kind", "?")
    lr = meta.get("lr", float("nan"))
    details = f"""[bold]{config.get("name", path.stem)}[/bold]
File: {path}
Format version: {checkpoint.version}
Digest: {checkpoint.digest[:16]}
Network: {meta.get("family", config.get("network", {}).get("kind", "?"))}
Parameters: {meta.get("parameters", "?")}
Epoch: {meta.get("epoch", 0)}
Optimizer: {optimizer} (lr {lr:.3g}, step {meta.get("step_count", 0)})
Batch-norm sites: {len(meta.get("bn_counters", {}))}"""
    console.print(
        Panel(details, title="Checkpoint", border_style="blue", title_align="left")
    )
