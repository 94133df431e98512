"""
Training loop: mini-batch gradients, penalties, optimizer steps, clipping,
batch-norm running statistics, metrics and checkpoints.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from ..utils.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ..utils.config import RunConfig
from ..utils.logger import get_logger
from .builder import build_model, load_datasets
from .data_io import BatchSampler, Dataset
from .errors import CheckpointError, NumericError, StateError
from .model import Network, accuracy
from .nn_math import floor_hits, loss, reset_floor_hits
from .optim import (
    OptimizerState,
    clip_weights,
    lr_decay,
    penalty_grad,
    step,
)
from .tensor import Tensor

logger = get_logger(__name__)

METRICS_HEADER = ["epoch", "train_loss", "eval_loss", "accuracy", "lr"]
EVAL_CHUNK = 256


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    eval_loss: float
    accuracy: float
    lr: float

    def row(self) -> List[str]:
        return [
            str(self.epoch),
            repr(self.train_loss),
            repr(self.eval_loss),
            repr(self.accuracy),
            repr(self.lr),
        ]


@dataclass
class TrainingSummary:
    name: str
    epochs: int
    history: List[EpochMetrics] = field(default_factory=list)
    checkpoints: List[Path] = field(default_factory=list)
    metrics_path: Optional[Path] = None

    @property
    def final(self) -> Optional[EpochMetrics]:
        return self.history[-1] if self.history else None


def evaluate(model: Network, dataset: Dataset) -> Tuple[float, float]:
    """
    Eval-mode loss and accuracy over a whole dataset, in fixed-size chunks.

    Returns:
        (loss, accuracy); accuracy is NaN for regression losses
    """
    total = len(dataset)
    weighted = 0.0
    predictions = []
    for start in range(0, total, EVAL_CHUNK):
        x = dataset.inputs[start : start + EVAL_CHUNK]
        y = dataset.targets[start : start + EVAL_CHUNK]
        h = model.predict(x)
        weighted += loss(model.loss_spec, h, y, h.shape[0]) * h.shape[0]
        predictions.append(h)
    joined = np.concatenate(predictions)
    return weighted / total, accuracy(model.loss_spec, joined, dataset.targets)


class Trainer:
    """
    Runs one configuration end to end.

    Usage:
        trainer = Trainer(load_config("xor-fnn"), out_dir=Path("runs/xor"))
        summary = trainer.fit()
    """

    def __init__(
        self,
        config: RunConfig,
        out_dir: Optional[Path] = None,
        model: Optional[Network] = None,
        data: Optional[Tuple[Dataset, Optional[Dataset]]] = None,
    ) -> None:
        self.config = config
        self.out_dir = out_dir
        self.model = model or build_model(config)
        self.train_set, self.eval_set = data or load_datasets(config)
        self.optimizer = OptimizerState(config.optimizer)
        self.sampler = BatchSampler(
            len(self.train_set),
            config.training.batch_size,
            shuffle=config.training.shuffle,
            seed=config.seed,
            drop_singleton=bool(self.model.bn_states()),
        )
        self.epoch = 0
        self.history: List[EpochMetrics] = []
        reset_floor_hits()
        if self.model.bn_states():
            logger.info("Batch-norm running statistics are updated once per mini-batch")

    def _penalized(self, grads: Dict[str, Tensor]) -> Dict[str, Tensor]:
        reg = self.config.regularization
        if reg.l1 == 0 and reg.l2 == 0:
            return grads
        params = self.model.parameters()
        for name in self.model.weight_names():
            grads[name] = grads[name] + penalty_grad(reg, params[name])
        return grads

    def _grad_at(
        self, inputs: Tensor, targets: Tensor
    ) -> Callable[[Dict[str, Tensor]], Dict[str, Tensor]]:
        def grad_at(lookahead: Dict[str, Tensor]) -> Dict[str, Tensor]:
            params = self.model.parameters()
            saved = {name: p.copy() for name, p in params.items()}
            for name, p in params.items():
                np.copyto(p, lookahead[name])
            try:
                _, grads = self.model.gradients(inputs, targets)
                return self._penalized(grads)
            finally:
                for name, p in params.items():
                    np.copyto(p, saved[name])

        return grad_at

    def train_step(self, inputs: Tensor, targets: Tensor) -> float:
        """
        One mini-batch update.

        Raises:
            NumericError: On a non-finite loss or gradient.
        """
        value, grads = self.model.gradients(inputs, targets)
        grads = self._penalized(grads)
        self.model.update_running()
        params = self.model.parameters()
        step(self.optimizer, params, grads, self._grad_at(inputs, targets))
        clip = self.config.regularization.clip
        if clip is not None:
            for name in self.model.weight_names():
                np.copyto(params[name], clip_weights(params[name], clip))
        return value

    def run_epoch(self) -> EpochMetrics:
        lr = self.optimizer.lr
        weighted = 0.0
        seen = 0
        for idx in self.sampler.epoch():
            x, y = self.train_set.inputs[idx], self.train_set.targets[idx]
            weighted += self.train_step(x, y) * len(idx)
            seen += len(idx)
        self.epoch += 1
        eval_data = self.eval_set if self.eval_set is not None else self.train_set
        eval_loss, acc = evaluate(self.model, eval_data)
        if not np.isfinite(eval_loss):
            raise NumericError(
                f"evaluation loss is {eval_loss} after epoch {self.epoch}"
            )
        if self.config.optimizer.decay > 0:
            self.optimizer.lr = lr_decay(self.optimizer.lr, self.config.optimizer.decay)
        metrics = EpochMetrics(self.epoch, weighted / seen, eval_loss, acc, lr)
        self.history.append(metrics)
        logger.info(
            "Epoch %d: train_loss=%.6g eval_loss=%.6g accuracy=%.4f lr=%.3g",
            metrics.epoch,
            metrics.train_loss,
            metrics.eval_loss,
            metrics.accuracy,
            lr,
        )
        return metrics

    def checkpoint(self) -> Checkpoint:
        """Snapshot of model, optimizer, generators and centering statistics."""
        arrays = {f"model.{k}": v for k, v in self.model.state_arrays().items()}
        arrays.update({f"optim.{k}": v for k, v in self.optimizer.arrays().items()})
        if self.train_set.mean is not None:
            arrays["data.mean"] = self.train_set.mean
        meta = {
            "epoch": self.epoch,
            "lr": self.optimizer.lr,
            "step_count": self.optimizer.step_count,
            "bn_counters": self.model.bn_counters(),
            "sampler_state": self.sampler.get_state(),
            "dropout_state": dict(self.model.dropout_rng.bit_generator.state),
            "family": self.model.family,
            "parameters": self.model.parameter_count(),
        }
        return Checkpoint(self.config.digest(), self.config.to_dict(), arrays, meta)

    def restore(self, checkpoint: Checkpoint) -> None:
        """
        Continue from ``checkpoint``; the model and optimizer are overwritten.

        Raises:
            CheckpointError: If the checkpoint belongs to another network.
        """
        if checkpoint.digest != self.config.digest():
            raise CheckpointError(
                "checkpoint was written for a different network configuration"
            )
        self.model.load_state(checkpoint.group("model"), checkpoint.meta["bn_counters"])
        self.optimizer.load_arrays(checkpoint.group("optim"))
        self.optimizer.lr = float(checkpoint.meta["lr"])
        self.optimizer.step_count = int(checkpoint.meta["step_count"])
        self.sampler.set_state(checkpoint.meta["sampler_state"])
        self.model.dropout_rng.bit_generator.state = checkpoint.meta["dropout_state"]
        self.epoch = int(checkpoint.meta["epoch"])
        logger.info("Resumed at epoch %d", self.epoch)

    def _checkpoint_path(self, final: bool) -> Path:
        if self.out_dir is None:
            raise StateError("checkpoints need an output directory")
        name = "final.ckpt" if final else f"epoch-{self.epoch:04d}.ckpt"
        return self.out_dir / "checkpoints" / name

    def fit(
        self,
        epochs: Optional[int] = None,
        on_epoch: Optional[Callable[[EpochMetrics], None]] = None,
    ) -> TrainingSummary:
        """
        Train until ``epochs`` (default: the configured count) have completed.

        Writes ``metrics.csv``, ``config.yaml`` and checkpoints under
        ``out_dir`` when one is set; a resumed run appends to its metrics.
        """
        target = epochs if epochs is not None else self.config.training.epochs
        summary = TrainingSummary(self.config.name, target)
        writer_file = None
        writer = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self.config.dump(self.out_dir / "config.yaml")
            summary.metrics_path = self.out_dir / "metrics.csv"
            fresh = self.epoch == 0 or not summary.metrics_path.exists()
            mode = "w" if fresh else "a"
            writer_file = open(
                summary.metrics_path, mode, newline="", encoding="utf-8"
            )
            writer = csv.writer(writer_file)
            if fresh:
                writer.writerow(METRICS_HEADER)
        every = self.config.training.checkpoint_every
        try:
            while self.epoch < target:
                metrics = self.run_epoch()
                summary.history.append(metrics)
                if writer is not None and writer_file is not None:
                    writer.writerow(metrics.row())
                    writer_file.flush()
                if self.out_dir is not None and every and self.epoch % every == 0:
                    summary.checkpoints.append(
                        save_checkpoint(self._checkpoint_path(False), self.checkpoint())
                    )
                if on_epoch is not None:
                    on_epoch(metrics)
        finally:
            if writer_file is not None:
                writer_file.close()
        if self.out_dir is not None:
            final = save_checkpoint(self._checkpoint_path(True), self.checkpoint())
            summary.checkpoints.append(final)
        hits = floor_hits()
        if hits:
            logger.warning(
                "Cross-entropy log floor was hit %d times during training", hits
            )
        return summary

    @classmethod
    def resume(cls, path: Path, out_dir: Optional[Path] = None) -> "Trainer":
        """Rebuild the run stored in a checkpoint and restore its state."""
        checkpoint = load_checkpoint(path)
        config = RunConfig.from_dict(checkpoint.config)
        trainer = cls(config, out_dir=out_dir)
        trainer.restore(checkpoint)
        return trainer
