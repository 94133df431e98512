"""
Pointwise network math: activations and their derivatives, output functions,
losses, and weight initialisation.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from ..utils.logger import get_logger
from .errors import ConfigError, DimensionError, NumericError
from .tensor import Tensor, as_tensor

logger = get_logger(__name__)

LEAKY_SLOPE = 0.01
LOG_FLOOR = 1e-15

SeedLike = Union[int, np.random.Generator, None]


def make_rng(seed: SeedLike) -> np.random.Generator:
    """Return ``seed`` if it already is a Generator, else a fresh seeded one."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class ActivationKind(str, Enum):
    """Hidden-layer non-linearities."""

    SIGMOID = "sigmoid"
    TANH = "tanh"
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    PARAMETRIC_RELU = "parametric_relu"
    ELU = "elu"


RELU_FAMILY = frozenset(
    {ActivationKind.RELU, ActivationKind.LEAKY_RELU, ActivationKind.PARAMETRIC_RELU}
)


@dataclass(frozen=True)
class Activation:
    """
    An activation kind plus its slope parameter.

    ``alpha`` is only read by ParametricReLU; it is a fixed hyperparameter.
    """

    kind: ActivationKind
    alpha: float = 0.25

    def __post_init__(self) -> None:
        if self.kind is ActivationKind.PARAMETRIC_RELU and not (
            math.isfinite(self.alpha) and self.alpha > 0
        ):
            raise ConfigError(
                f"parametric ReLU needs a finite alpha > 0, got {self.alpha}"
            )

    @classmethod
    def parse(
        cls, value: Union["Activation", ActivationKind, str, Dict[str, Any]]
    ) -> "Activation":
        """
        Build an Activation from a config value.

        Accepts an Activation, an ActivationKind, a kind name such as ``"tanh"``,
        or a mapping ``{"kind": "parametric_relu", "alpha": 0.2}``.

        Raises:
            ConfigError: If the kind name is unknown.
        """
        if isinstance(value, Activation):
            return value
        if isinstance(value, ActivationKind):
            return cls(value)
        alpha = 0.25
        if isinstance(value, dict):
            alpha = float(value.get("alpha", alpha))
            value = str(value.get("kind", ""))
        try:
            return cls(ActivationKind(str(value).lower()), alpha)
        except ValueError as e:
            raise ConfigError(f"unknown activation '{value}'") from e

    @property
    def kinked(self) -> bool:
        """True for the ReLU family, whose derivative jumps at 0."""
        return self.kind in RELU_FAMILY


ActivationLike = Union[Activation, ActivationKind, str]


def _resolve(kind: ActivationLike) -> Activation:
    return kind if isinstance(kind, Activation) else Activation.parse(kind)


def _check_finite(a: Tensor) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericError("non-finite value passed to an activation")


def sigmoid(a: Tensor) -> Tensor:
    """Logistic function, evaluated without overflow for large |a|."""
    out = np.empty_like(a)
    positive = a >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-a[positive]))
    e = np.exp(a[~positive])
    out[~positive] = e / (1.0 + e)
    return out


def activate(kind: ActivationLike, a: Tensor) -> Tensor:
    """
    Apply g elementwise.

    The ReLU variants take the x >= 0 branch at exactly 0.

    Raises:
        NumericError: If ``a`` holds NaN or infinities.
    """
    act = _resolve(kind)
    a = as_tensor(a)
    _check_finite(a)
    match act.kind:
        case ActivationKind.SIGMOID:
            return sigmoid(a)
        case ActivationKind.TANH:
            return np.tanh(a)
        case ActivationKind.RELU:
            return np.where(a >= 0, a, 0.0)
        case ActivationKind.LEAKY_RELU:
            return np.where(a >= 0, a, LEAKY_SLOPE * a)
        case ActivationKind.PARAMETRIC_RELU:
            return np.where(a >= 0, a, act.alpha * a)
        case ActivationKind.ELU:
            return np.where(a >= 0, a, np.expm1(np.minimum(a, 0.0)))
    raise ConfigError(f"unhandled activation {act.kind}")


def activate_prime(kind: ActivationLike, a: Tensor) -> Tensor:
    """
    Elementwise derivative g'(a); the x >= 0 branch applies at 0.

    Raises:
        NumericError: If ``a`` holds NaN or infinities.
    """
    act = _resolve(kind)
    a = as_tensor(a)
    _check_finite(a)
    match act.kind:
        case ActivationKind.SIGMOID:
            s = sigmoid(a)
            return s * (1.0 - s)
        case ActivationKind.TANH:
            t = np.tanh(a)
            return 1.0 - t * t
        case ActivationKind.RELU:
            return np.where(a >= 0, 1.0, 0.0)
        case ActivationKind.LEAKY_RELU:
            return np.where(a >= 0, 1.0, LEAKY_SLOPE)
        case ActivationKind.PARAMETRIC_RELU:
            return np.where(a >= 0, 1.0, act.alpha)
        case ActivationKind.ELU:
            return np.where(a >= 0, 1.0, np.exp(np.minimum(a, 0.0)))
    raise ConfigError(f"unhandled activation {act.kind}")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with the maximum subtracted first."""
    a = as_tensor(a)
    shifted = a - np.max(a, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


class LossKind(str, Enum):
    MSE = "mse"
    CROSS_ENTROPY = "cross_entropy"
    BINNED_CROSS_ENTROPY = "binned_cross_entropy"


@dataclass(frozen=True)
class Loss:
    """
    A loss kind plus the bin count of the binned variant.

    Binned outputs and targets are laid out flattened, ``[..., F * C]`` with
    the C bins of feature f contiguous.
    """

    kind: LossKind
    bins: int = 0

    def __post_init__(self) -> None:
        if self.kind is LossKind.BINNED_CROSS_ENTROPY and self.bins < 2:
            raise ConfigError(
                f"binned cross-entropy needs at least 2 bins, got {self.bins}"
            )

    @classmethod
    def parse(cls, value: Union["Loss", LossKind, str], bins: int = 0) -> "Loss":
        if isinstance(value, Loss):
            return value
        try:
            name = value.value if isinstance(value, LossKind) else value
            return cls(LossKind(str(name)), bins)
        except ValueError as e:
            raise ConfigError(f"unknown loss '{value}'") from e

    @property
    def classifies(self) -> bool:
        return self.kind is not LossKind.MSE


LossLike = Union[Loss, LossKind, str]


def _resolve_loss(kind: LossLike) -> Loss:
    return kind if isinstance(kind, Loss) else Loss.parse(kind)


def output_function(kind: LossLike, a: Tensor) -> Tensor:
    """
    Map output pre-activations to predictions.

    Identity for MSE, softmax over the last axis for cross-entropy, and a
    softmax over each feature's C bins for the binned loss.
    """
    loss_spec = _resolve_loss(kind)
    if loss_spec.kind is LossKind.MSE:
        return as_tensor(a).copy()
    if loss_spec.kind is LossKind.CROSS_ENTROPY:
        return softmax(a)
    C = loss_spec.bins
    if a.shape[-1] % C:
        raise DimensionError(
            f"output width {a.shape[-1]} is not a multiple of {C} bins"
        )
    grouped = a.reshape(*a.shape[:-1], a.shape[-1] // C, C)
    return softmax(grouped).reshape(a.shape)


_floor_hits = {"count": 0}


def floor_hits() -> int:
    """Number of predictions clamped at the log floor since the last reset."""
    return _floor_hits["count"]


def reset_floor_hits() -> None:
    _floor_hits["count"] = 0


def loss(kind: LossLike, predictions: Tensor, targets: Tensor, T_mb: int) -> float:
    """
    Evaluate J over one mini-batch.

    Args:
        kind: Loss to evaluate
        predictions: Output-function values h
        targets: Regression targets (MSE) or one-hot rows (cross-entropy kinds)
        T_mb: Mini-batch size used in the 1/T_mb normalisation

    Returns:
        MSE: (1/2T_mb) sum (y - h)^2. Cross-entropy: -(1/T_mb) sum y ln h, with
        h clamped at 1e-15 (every clamp counted and logged).

    Raises:
        DimensionError: If shapes differ.
    """
    loss_spec = _resolve_loss(kind)
    h = as_tensor(predictions)
    y = as_tensor(targets)
    if h.shape != y.shape:
        raise DimensionError(f"predictions {h.shape} and targets {y.shape} differ")
    if loss_spec.kind is LossKind.MSE:
        diff = y - h
        return float(np.sum(diff * diff) / (2.0 * T_mb))

    clamped = (h < LOG_FLOOR) & (y != 0)
    hits = int(np.count_nonzero(clamped))
    if hits:
        _floor_hits["count"] += hits
        logger.warning(
            "Cross-entropy clamped %d prediction(s) at %.0e (total %d)",
            hits,
            LOG_FLOOR,
            _floor_hits["count"],
        )
    return float(-np.sum(y * np.log(np.maximum(h, LOG_FLOOR))) / T_mb)


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_weights(
    fan_in: int,
    fan_out: int,
    rng_seed: SeedLike = None,
    *,
    uniform: bool = False,
    shape: Optional[Tuple[int, ...]] = None,
) -> Tensor:
    """
    Draw an initial weight tensor.

    Each entry is sqrt(6 / (fan_in + fan_out)) times a standard normal draw;
    with ``uniform`` the same bound is used as the half-width of a uniform law.

    Args:
        fan_in: Incoming width F_i
        fan_out: Outgoing width F_{i+1}
        rng_seed: Seed or generator (same seed, same tensor)
        uniform: Use U(-bound, bound) instead of bound * N(0, 1)
        shape: Target shape; defaults to [fan_out, fan_in]

    Returns:
        Freshly drawn float64 tensor.
    """
    if fan_in < 1 or fan_out < 1:
        raise DimensionError(f"fans must be positive, got {fan_in}, {fan_out}")
    rng = make_rng(rng_seed)
    target = shape if shape is not None else (fan_out, fan_in)
    bound = glorot_bound(fan_in, fan_out)
    if uniform:
        return rng.uniform(-bound, bound, size=target)
    return bound * rng.standard_normal(target)


def init_lstm_diagonal(
    F_in: int, F_out: int, randomize: bool = False, rng_seed: SeedLike = None
) -> Tensor:
    """
    Half-identity initialisation for recurrent weights.

    Entry (f, f') is 1/2 * delta(f, f') * (1 + noise) where the noise term is
    sqrt(6 / (F_in + F_out)) * N(0, 1) when ``randomize`` is set and absent
    otherwise. Off-diagonal entries are always 0.

    Raises:
        DimensionError: If the matrix is not square and ``randomize`` is off.
    """
    if F_in != F_out and not randomize:
        raise DimensionError(
            f"diagonal initialisation needs a square matrix, got {F_out}x{F_in}"
        )
    bracket = np.ones((F_out, F_in))
    if randomize:
        noise = make_rng(rng_seed).standard_normal((F_out, F_in))
        bracket += glorot_bound(F_in, F_out) * noise
    return 0.5 * np.eye(F_out, F_in) * bracket
