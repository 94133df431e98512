"""
Common surface of every network family.

The trainer, the gradient checker and the checkpoint code only talk to this
interface: named live parameter arrays, a loss closure, analytic gradients,
batch-norm bookkeeping and state import/export.
"""

from abc import ABC, abstractmethod
from typing import Dict, List, Tuple

import numpy as np

from ..utils.logger import get_logger
from .batchnorm import BatchNormState, bn_update_running
from .errors import NumericError, StateError
from .nn_math import Loss, LossKind, SeedLike, loss, make_rng
from .tensor import Tensor, as_tensor

logger = get_logger(__name__)


def is_weight(name: str) -> bool:
    """True for weight tensors, the only parameters penalties and clipping touch."""
    return name.rsplit(".", 1)[-1].startswith("theta")


class Network(ABC):
    """
    Base class for FNN, CNN, RNN and LSTM models.

    Subclasses own their layers and implement the forward pass, the backward
    pass over the cached forward, and parameter enumeration. Everything else
    (loss closures, gradient evaluation, running statistics, state transfer)
    is shared.
    """

    family = "network"

    def __init__(self, loss_spec: Loss, dropout_seed: SeedLike = None) -> None:
        self.loss_spec = loss_spec
        self.dropout_rng = make_rng(dropout_seed)

    @abstractmethod
    def forward(self, inputs: Tensor, train: bool) -> Tensor:
        """Predictions for ``inputs``; train mode refreshes every cache."""

    @abstractmethod
    def backward(self, targets: Tensor) -> Dict[str, Tensor]:
        """Loss gradients of the last training forward, keyed like parameters()."""

    @abstractmethod
    def parameters(self) -> Dict[str, Tensor]:
        """Live parameter arrays in a fixed order; optimizers update them in place."""

    @abstractmethod
    def bn_states(self) -> Dict[str, BatchNormState]:
        """Every batch-norm site, keyed by a stable name."""

    @abstractmethod
    def kinked_preactivations(self) -> List[Tensor]:
        """Pre-activations of ReLU-family units from the last forward."""

    def freeze_dropout(self, frozen: bool) -> None:
        """Reuse the last drawn dropout masks until unfrozen (no-op without dropout)."""

    def describe(self) -> List[Dict[str, str]]:
        """One row per layer for display; families override with detail."""
        return [
            {
                "layer": name,
                "kind": "tensor",
                "shape": "x".join(map(str, p.shape)),
                "detail": "",
            }
            for name, p in self.parameters().items()
        ]

    def _ordered(self, grads: Dict[str, Tensor]) -> Dict[str, Tensor]:
        params = self.parameters()
        missing = [name for name in params if name not in grads]
        if missing:
            raise StateError(f"backward produced no gradient for {', '.join(missing)}")
        return {name: grads[name] for name in params}

    def loss(self, inputs: Tensor, targets: Tensor, train: bool = True) -> float:
        """
        Loss of one batch.

        Train mode uses batch statistics and leaves the running statistics alone.
        """
        predictions = self.forward(inputs, train)
        T_mb = predictions.shape[0]
        return loss(self.loss_spec, predictions, as_tensor(targets), T_mb)

    def gradients(
        self, inputs: Tensor, targets: Tensor
    ) -> Tuple[float, Dict[str, Tensor]]:
        """
        Training forward plus backward.

        Returns:
            (loss value, gradients keyed like parameters())

        Raises:
            NumericError: If the loss is not finite.
        """
        value = self.loss(inputs, targets, train=True)
        if not np.isfinite(value):
            raise NumericError(f"loss is {value}")
        return value, self.backward(targets)

    def predict(self, inputs: Tensor) -> Tensor:
        return self.forward(inputs, train=False)

    def update_running(self) -> None:
        """Fold the last training batch into every batch-norm running average."""
        for state in self.bn_states().values():
            bn_update_running(state)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def weight_names(self) -> List[str]:
        return [name for name in self.parameters() if is_weight(name)]

    def state_arrays(self) -> Dict[str, Tensor]:
        """Parameters plus batch-norm running statistics, for checkpoints."""
        arrays = dict(self.parameters())
        for site, state in self.bn_states().items():
            arrays[f"{site}.running_mean"] = state.running_mean
            arrays[f"{site}.running_var"] = state.running_var
        return arrays

    def bn_counters(self) -> Dict[str, List[int]]:
        return {
            site: [state.epoch_counter, state.running_count]
            for site, state in self.bn_states().items()
        }

    def load_state(
        self, arrays: Dict[str, Tensor], counters: Dict[str, List[int]]
    ) -> None:
        """
        Copy checkpointed arrays into the live model.

        Every name and shape is checked before anything is written.

        Raises:
            StateError: If names or shapes differ from this model.
        """
        live = self.state_arrays()
        if set(live) != set(arrays):
            extra = sorted(set(arrays) ^ set(live))
            raise StateError(f"state does not match the model: {', '.join(extra[:5])}")
        for name, target in live.items():
            if target.shape != arrays[name].shape:
                raise StateError(
                    f"{name}: stored shape {arrays[name].shape}, "
                    f"model has {target.shape}"
                )
        if set(counters) != set(self.bn_states()):
            raise StateError("batch-norm counters do not match the model")

        params = self.parameters()
        for name, value in arrays.items():
            if name in params:
                np.copyto(params[name], value)
        for site, state in self.bn_states().items():
            mean, var = arrays[f"{site}.running_mean"], arrays[f"{site}.running_var"]
            state.running_mean = np.array(mean, dtype=np.float64)
            state.running_var = np.array(var, dtype=np.float64)
            state.epoch_counter, state.running_count = (int(v) for v in counters[site])
            state.clear_cache()


def accuracy(loss_spec: Loss, predictions: Tensor, targets: Tensor) -> float:
    """
    Fraction of correct argmax decisions along the feature axis.

    Binned outputs are scored per feature over their C bins. Returns NaN for
    regression losses.
    """
    if loss_spec.kind is LossKind.MSE:
        return float("nan")
    h = as_tensor(predictions)
    y = as_tensor(targets)
    if loss_spec.kind is LossKind.BINNED_CROSS_ENTROPY:
        C = loss_spec.bins
        h = np.moveaxis(h, 1, -1)
        y = np.moveaxis(y, 1, -1)
        h = h.reshape(*h.shape[:-1], h.shape[-1] // C, C)
        y = y.reshape(*y.shape[:-1], y.shape[-1] // C, C)
        return float(np.mean(np.argmax(h, axis=-1) == np.argmax(y, axis=-1)))
    return float(np.mean(np.argmax(h, axis=1) == np.argmax(y, axis=1)))
