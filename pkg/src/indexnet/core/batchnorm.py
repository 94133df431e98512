"""
Batch normalization: train/eval forwards, running statistics, and the
vector-Jacobian contraction every backward pass goes through.

Normalization runs over the sample axis for dense layers and over the sample
and both spatial axes for convolution feature maps. The Jacobian

    J[t, t'] = gamma_tilde * (delta(t, t') - (1 + h_tilde_t * h_tilde_t') / D)

is never materialized: contracting it with an upstream tensor only needs the
two per-feature sums of the upstream and of upstream * h_tilde.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from ..utils.logger import get_logger
from .errors import BatchSizeError, DimensionError, StateError
from .tensor import Tensor, as_tensor

logger = get_logger(__name__)

DEFAULT_EPSILON = 1e-5


class BatchNormMode(str, Enum):
    """Which axes a batch-norm state averages over."""

    PER_FEATURE = "per_feature"
    PER_FEATURE_MAP = "per_feature_map"

    @property
    def axes(self) -> Tuple[int, ...]:
        return (0,) if self is BatchNormMode.PER_FEATURE else (0, 2, 3)

    @property
    def rank(self) -> int:
        return 2 if self is BatchNormMode.PER_FEATURE else 4


@dataclass
class BatchNormState:
    """
    Learned coefficients, last-batch caches and running statistics of one
    batch-norm site.

    Attributes:
        gamma: Per-feature scale
        beta: Per-feature shift
        mode: Normalization axes
        epsilon: Variance floor inside the square root
        batch_mean: Last training batch mean (cached by bn_forward_train)
        batch_var: Last training batch biased variance
        h_tilde: Last normalized input, shaped like the input
        gamma_tilde: gamma / sqrt(batch_var + epsilon)
        running_mean: Cumulative average of batch means
        running_var: Cumulative average of batch variances
        epoch_counter: Number of running updates applied so far
        running_count: Elements per feature in the batches averaged so far
    """

    gamma: Tensor
    beta: Tensor
    mode: BatchNormMode = BatchNormMode.PER_FEATURE
    epsilon: float = DEFAULT_EPSILON
    batch_mean: Optional[Tensor] = None
    batch_var: Optional[Tensor] = None
    h_tilde: Optional[Tensor] = None
    gamma_tilde: Optional[Tensor] = None
    running_mean: Tensor = field(default_factory=lambda: np.zeros(0))
    running_var: Tensor = field(default_factory=lambda: np.zeros(0))
    epoch_counter: int = 0
    running_count: int = 0

    @classmethod
    def create(
        cls,
        num_features: int,
        mode: BatchNormMode = BatchNormMode.PER_FEATURE,
        epsilon: float = DEFAULT_EPSILON,
    ) -> "BatchNormState":
        """Fresh state with gamma = 1, beta = 0 and no statistics yet."""
        return cls(
            gamma=np.ones(num_features),
            beta=np.zeros(num_features),
            mode=mode,
            epsilon=epsilon,
            running_mean=np.zeros(num_features),
            running_var=np.zeros(num_features),
        )

    @property
    def num_features(self) -> int:
        return int(self.gamma.shape[0])

    @property
    def input_shape(self) -> Optional[Tuple[int, ...]]:
        return None if self.h_tilde is None else self.h_tilde.shape

    def broadcast(self, v: Tensor) -> Tensor:
        """Reshape a per-feature vector so it broadcasts against the input."""
        if self.mode is BatchNormMode.PER_FEATURE:
            return v.reshape(1, -1)
        return v.reshape(1, -1, 1, 1)

    def count(self, shape: Tuple[int, ...]) -> int:
        """Number of entries each feature is averaged over (the divisor D)."""
        return int(np.prod([shape[a] for a in self.mode.axes]))

    def clear_cache(self) -> None:
        self.batch_mean = self.batch_var = self.h_tilde = self.gamma_tilde = None

    def statistics(self) -> Dict[str, Tensor]:
        """Arrays a checkpoint needs to restore this state."""
        return {
            "gamma": self.gamma,
            "beta": self.beta,
            "running_mean": self.running_mean,
            "running_var": self.running_var,
        }


def _check_input(h: Tensor, state: BatchNormState) -> None:
    if h.ndim != state.mode.rank or h.shape[1] != state.num_features:
        raise DimensionError(
            f"batch norm over {state.num_features} features ({state.mode.value}) "
            f"cannot take input of shape {h.shape}"
        )


def bn_forward_train(h: Tensor, state: BatchNormState) -> Tensor:
    """
    Normalize with the statistics of the batch itself and cache them.

    Args:
        h: [T_mb, F] (per feature) or [T_mb, F, N, T] (per feature map)
        state: State whose caches get overwritten

    Returns:
        y = gamma * h_tilde + beta

    Raises:
        BatchSizeError: If fewer than two samples are given.
        DimensionError: If the input does not match the state's features.
    """
    h = as_tensor(h)
    _check_input(h, state)
    if h.shape[0] < 2:
        raise BatchSizeError(f"batch norm needs at least 2 samples, got {h.shape[0]}")
    axes = state.mode.axes
    mean = h.mean(axis=axes)
    centered = h - state.broadcast(mean)
    var = (centered * centered).mean(axis=axes)
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    h_tilde = centered * state.broadcast(inv_std)

    state.batch_mean = mean
    state.batch_var = var
    state.h_tilde = h_tilde
    state.gamma_tilde = state.gamma * inv_std
    return state.broadcast(state.gamma) * h_tilde + state.broadcast(state.beta)


def bn_update_running(state: BatchNormState) -> BatchNormState:
    """
    Fold the cached batch statistics into the running averages.

    Applies E_{e+1} = (e * E_e + stat) / (e + 1) to both mean and variance and
    increments e.

    Raises:
        StateError: If no training forward has cached statistics yet.
    """
    if state.batch_mean is None or state.batch_var is None or state.h_tilde is None:
        raise StateError("running statistics updated before any training forward")
    e = state.epoch_counter
    state.running_mean = (e * state.running_mean + state.batch_mean) / (e + 1)
    state.running_var = (e * state.running_var + state.batch_var) / (e + 1)
    state.running_count = state.count(state.h_tilde.shape)
    state.epoch_counter = e + 1
    return state


def bn_forward_eval(h: Tensor, state: BatchNormState) -> Tensor:
    """
    Normalize with the running statistics.

    The running variance is a biased batch estimate, so it is rescaled by
    D / (D - 1) with D the per-feature element count of the averaged batches.
    Each sample's output depends on that sample alone.

    Raises:
        StateError: If no running update has happened yet.
    """
    if state.epoch_counter == 0:
        raise StateError("batch-norm running statistics are uninitialized")
    h = as_tensor(h)
    _check_input(h, state)
    D = state.running_count
    unbiased = state.running_var * (D / (D - 1))
    scale = state.gamma / np.sqrt(unbiased + state.epsilon)
    return state.broadcast(scale) * (h - state.broadcast(state.running_mean)) + (
        state.broadcast(state.beta)
    )


def bn_forward(h: Tensor, state: BatchNormState, train: bool) -> Tensor:
    return bn_forward_train(h, state) if train else bn_forward_eval(h, state)


def bn_jacobian_contract(state: BatchNormState, upstream: Tensor) -> Tensor:
    """
    Contract the batch-norm Jacobian with an upstream gradient.

    out = gamma_tilde * (upstream - (mu1 + mu2 * h_tilde) / D) where mu1 and mu2
    are the per-feature sums of upstream and upstream * h_tilde.

    Raises:
        StateError: If there is no cache, or it was made for another shape.
    """
    if state.h_tilde is None or state.gamma_tilde is None:
        raise StateError("batch-norm Jacobian needs a training forward first")
    upstream = as_tensor(upstream)
    if upstream.shape != state.h_tilde.shape:
        raise StateError(
            f"stale batch-norm cache: forward saw {state.h_tilde.shape}, "
            f"upstream is {upstream.shape}"
        )
    axes = state.mode.axes
    h_tilde = state.h_tilde
    mu1 = upstream.sum(axis=axes)
    mu2 = (upstream * h_tilde).sum(axis=axes)
    D = state.count(h_tilde.shape)
    correction = (state.broadcast(mu1) + state.broadcast(mu2) * h_tilde) / D
    return state.broadcast(state.gamma_tilde) * (upstream - correction)


def bn_coeff_grads(state: BatchNormState, upstream: Tensor) -> Tuple[Tensor, Tensor]:
    """
    Gradients of gamma and beta from the gradient on the batch-norm output.

    Returns:
        (d_gamma, d_beta) = (sum upstream * h_tilde, sum upstream)
    """
    if state.h_tilde is None or upstream.shape != state.h_tilde.shape:
        raise StateError(
            "batch-norm coefficient gradients need a matching forward cache"
        )
    axes = state.mode.axes
    return (upstream * state.h_tilde).sum(axis=axes), upstream.sum(axis=axes)
