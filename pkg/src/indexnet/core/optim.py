"""
Gradient-descent update rules, learning-rate decay, weight clipping and the
L1/L2 penalty gradients.

Parameters and gradients travel as name -> array mappings; ``step`` updates
the parameter arrays in place so a model's live tensors follow along.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from ..utils.logger import get_logger
from .errors import ConfigError, NumericError, UnsupportedConfigError
from .tensor import Tensor

logger = get_logger(__name__)

GradFn = Callable[[Dict[str, Tensor]], Dict[str, Tensor]]


class OptimizerKind(str, Enum):
    SGD = "sgd"
    MOMENTUM = "momentum"
    NESTEROV = "nesterov"
    ADAGRAD = "adagrad"
    RMSPROP = "rmsprop"
    ADADELTA = "adadelta"
    ADAM = "adam"


DEFAULT_LR: Dict[OptimizerKind, Optional[float]] = {
    OptimizerKind.SGD: 1e-3,
    OptimizerKind.MOMENTUM: 1e-3,
    OptimizerKind.NESTEROV: 1e-3,
    OptimizerKind.ADAGRAD: 1e-2,
    OptimizerKind.RMSPROP: 1e-3,
    OptimizerKind.ADADELTA: None,
    OptimizerKind.ADAM: 1e-3,
}


@dataclass(frozen=True)
class OptimizerConfig:
    """
    Hyperparameters of one update rule.

    Attributes:
        kind: Update rule
        lr: Learning rate eta; None picks the per-kind default (Adadelta has none)
        gamma: Memory factor of Momentum, Nesterov, RMSprop and Adadelta
        beta1: Adam first-moment factor
        beta2: Adam second-moment factor
        epsilon: Floor inside the square roots
        decay: alpha_0 of the per-epoch decay eta <- exp(-alpha_0) eta
    """

    kind: OptimizerKind = OptimizerKind.ADAM
    lr: Optional[float] = None
    gamma: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay: float = 0.0

    def __post_init__(self) -> None:
        if self.lr is not None and not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        for name in ("gamma", "beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {value}")
        if self.epsilon <= 0 or self.decay < 0:
            raise ConfigError("epsilon must be positive and decay non-negative")

    @property
    def learning_rate(self) -> float:
        if self.lr is not None:
            return self.lr
        default = DEFAULT_LR[self.kind]
        return default if default is not None else 1.0


@dataclass
class OptimizerState:
    """
    Accumulators of one optimizer run.

    ``v`` holds the velocity (Momentum, Nesterov) or the squared-gradient
    average (Adagrad, RMSprop, Adadelta, Adam); ``m`` holds Adam's first moment
    or Adadelta's squared-step average. Adam keeps both moments already
    bias-corrected. ``step_count`` is e.
    """

    config: OptimizerConfig
    v: Dict[str, Tensor] = field(default_factory=dict)
    m: Dict[str, Tensor] = field(default_factory=dict)
    step_count: int = 0
    lr: float = 0.0

    def __post_init__(self) -> None:
        if self.lr == 0.0:
            self.lr = self.config.learning_rate

    def arrays(self) -> Dict[str, Tensor]:
        """Accumulators keyed for a checkpoint manifest."""
        out = {f"v.{name}": value for name, value in self.v.items()}
        out.update({f"m.{name}": value for name, value in self.m.items()})
        return out

    def load_arrays(self, arrays: Mapping[str, Tensor]) -> None:
        self.v, self.m = {}, {}
        for key, value in arrays.items():
            slot, _, name = key.partition(".")
            if slot in ("v", "m"):
                getattr(self, slot)[name] = np.array(value, dtype=np.float64)


def _check_finite(grads: Mapping[str, Tensor]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}; step refused")


def _slot(store: Dict[str, Tensor], name: str, like: Tensor) -> Tensor:
    if name not in store:
        store[name] = np.zeros_like(like)
    return store[name]


def step(
    state: OptimizerState,
    params: Dict[str, Tensor],
    grads: Mapping[str, Tensor],
    grad_at: Optional[GradFn] = None,
) -> Dict[str, Tensor]:
    """
    Apply one update to every parameter in place.

    Args:
        state: Accumulators and hyperparameters; e is incremented once
        params: Live parameter arrays
        grads: Loss gradients (penalties included) at ``params``
        grad_at: Nesterov only: returns gradients at a given parameter set

    Returns:
        ``params`` (same arrays, updated)

    Raises:
        UnsupportedConfigError: Nesterov without ``grad_at``.
        NumericError: A gradient holds NaN or infinities (nothing is updated).
    """
    cfg = state.config
    missing = [name for name in params if name not in grads]
    if missing:
        raise ConfigError(f"no gradient for {', '.join(missing)}")
    _check_finite(grads)
    lr = state.lr
    gamma, eps = cfg.gamma, cfg.epsilon

    if cfg.kind is OptimizerKind.NESTEROV:
        if grad_at is None:
            raise UnsupportedConfigError(
                "Nesterov needs a gradient re-evaluation callback"
            )
        lookahead = {
            name: p - gamma * _slot(state.v, name, p) for name, p in params.items()
        }
        grads = grad_at(lookahead)
        _check_finite(grads)

    e = state.step_count + 1
    for name, theta in params.items():
        g = grads[name]
        match cfg.kind:
            case OptimizerKind.SGD:
                theta -= lr * g
            case OptimizerKind.MOMENTUM | OptimizerKind.NESTEROV:
                v = _slot(state.v, name, theta)
                v *= gamma
                v += lr * g
                theta -= v
            case OptimizerKind.ADAGRAD:
                v = _slot(state.v, name, theta)
                v += g * g
                theta -= lr / np.sqrt(v + eps) * g
            case OptimizerKind.RMSPROP:
                v = _slot(state.v, name, theta)
                v *= gamma
                v += (1.0 - gamma) * g * g
                theta -= lr / np.sqrt(v + eps) * g
            case OptimizerKind.ADADELTA:
                v = _slot(state.v, name, theta)
                m = _slot(state.m, name, theta)
                v *= gamma
                v += (1.0 - gamma) * g * g
                delta = np.sqrt(m + eps) / np.sqrt(v + eps) * g
                m *= gamma
                m += (1.0 - gamma) * delta * delta
                theta -= delta
            case OptimizerKind.ADAM:
                # m and v hold the bias-corrected moments; the first step
                # weights the new gradient by exactly 1
                m_hat = _slot(state.m, name, theta)
                v_hat = _slot(state.v, name, theta)
                m_hat += (1.0 - cfg.beta1) / (1.0 - cfg.beta1**e) * (g - m_hat)
                v_hat += (1.0 - cfg.beta2) / (1.0 - cfg.beta2**e) * (g * g - v_hat)
                theta -= lr / np.sqrt(v_hat + eps) * m_hat
    state.step_count = e
    return params


def lr_decay(lr: float, alpha0: float) -> float:
    """eta_e = exp(-alpha_0) * eta_{e-1}."""
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    return math.exp(-alpha0) * lr


@dataclass(frozen=True)
class RegularizerConfig:
    """Penalty weights and the optional weight-norm ceiling C."""

    l2: float = 0.0
    l1: float = 0.0
    clip: Optional[float] = None

    def __post_init__(self) -> None:
        if self.l2 < 0 or self.l1 < 0:
            raise ConfigError("penalty weights must be non-negative")
        if self.clip is not None and not self.clip > 0:
            raise ConfigError(f"clip threshold must be positive, got {self.clip}")


def clip_weights(theta: Tensor, C: float) -> Tensor:
    """Rescale ``theta`` to norm C when its L2 norm exceeds C, else return it as is."""
    if not C > 0:
        raise ConfigError(f"clip threshold must be positive, got {C}")
    norm = float(np.sqrt(np.sum(theta * theta)))
    if norm <= C:
        return theta
    return theta * (C / norm)


def penalty_grad(config: RegularizerConfig, theta: Tensor) -> Tensor:
    """Gradient of l2 * |theta|^2 + l1 * |theta|_1: 2 l2 theta + l1 sign(theta)."""
    return 2.0 * config.l2 * theta + config.l1 * np.sign(theta)


def penalty_value(config: RegularizerConfig, theta: Tensor) -> float:
    return float(config.l2 * np.sum(theta * theta) + config.l1 * np.sum(np.abs(theta)))
