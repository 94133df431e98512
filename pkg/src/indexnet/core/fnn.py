"""
Fully-connected layers and the feedforward network built from them.

A hidden layer runs weight averaging, the non-linearity, then batch
normalization (WA -> g -> BN). Dropout acts on a layer's input. The output
layer carries a bias and the loss's output function instead of g.

Backward passes keep two quantities per layer: the gradient with respect to
its output y (accumulated from every consumer) and the error rate delta, the
gradient with respect to its pre-activation a.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..utils.logger import get_logger
from .batchnorm import (
    BatchNormMode,
    BatchNormState,
    bn_coeff_grads,
    bn_forward,
    bn_jacobian_contract,
)
from .errors import ConfigError, DimensionError, StateError
from .model import Network
from .nn_math import (
    Activation,
    ActivationLike,
    Loss,
    SeedLike,
    activate,
    activate_prime,
    init_weights,
    make_rng,
    output_function,
)
from .tensor import Tensor, as_tensor

logger = get_logger(__name__)


@dataclass
class DropoutMask:
    """Bernoulli keep-mask of one layer input; ``p`` is the drop probability."""

    mask: Tensor
    p: float

    @property
    def scale(self) -> Tensor:
        return self.mask / (1.0 - self.p)


def dropout_apply(
    h: Tensor,
    p: float,
    train: bool,
    rng_seed: SeedLike = None,
    frozen: Optional[DropoutMask] = None,
) -> Tuple[Tensor, DropoutMask]:
    """
    Drop units with probability ``p`` and rescale survivors by 1 / (1 - p).

    Args:
        h: Activations to thin
        p: Drop probability in [0, 1)
        train: Eval mode returns ``h`` untouched
        rng_seed: Seed or generator for the mask draw
        frozen: Reuse this mask instead of drawing one

    Returns:
        (thinned activations, mask used)
    """
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return h, DropoutMask(np.ones_like(h), p)
    if frozen is not None:
        if frozen.mask.shape != h.shape:
            raise StateError(
                f"frozen dropout mask {frozen.mask.shape} does not fit {h.shape}"
            )
        mask = frozen
    else:
        keep = make_rng(rng_seed).random(h.shape) >= p
        mask = DropoutMask(keep.astype(np.float64), p)
    return h * mask.scale, mask


@dataclass
class DenseCache:
    inputs: Optional[Tensor] = None
    a: Optional[Tensor] = None
    h: Optional[Tensor] = None
    y: Optional[Tensor] = None
    mask: Optional[DropoutMask] = None


@dataclass
class DenseLayer:
    """
    One weight-averaging layer.

    Attributes:
        theta: Weights [F_out, F_in]
        activation: Non-linearity (ignored by output layers)
        bias: Present only when batch norm is off, and always on output layers
        bn: Optional per-feature batch norm applied after g
        dropout: Drop probability on this layer's input
        output: Loss whose output function replaces g on the output layer
        probe: Additive perturbation on a, for finite-difference checks
    """

    theta: Tensor
    activation: Activation = field(default_factory=lambda: Activation.parse("tanh"))
    bias: Optional[Tensor] = None
    bn: Optional[BatchNormState] = None
    dropout: float = 0.0
    output: Optional[Loss] = None
    probe: Optional[Tensor] = None
    frozen_mask: Optional[DropoutMask] = None
    cache: DenseCache = field(default_factory=DenseCache)

    @property
    def fan_in(self) -> int:
        return int(self.theta.shape[1])

    @property
    def fan_out(self) -> int:
        return int(self.theta.shape[0])

    @classmethod
    def create(
        cls,
        fan_in: int,
        fan_out: int,
        activation: ActivationLike = "tanh",
        *,
        batch_norm: bool = False,
        dropout: float = 0.0,
        output: Optional[Loss] = None,
        rng_seed: SeedLike = None,
        uniform: bool = False,
    ) -> "DenseLayer":
        if batch_norm and output is not None:
            raise ConfigError("the output layer cannot be batch-normalized")
        bn = None
        if batch_norm:
            bn = BatchNormState.create(fan_out, BatchNormMode.PER_FEATURE)
        return cls(
            theta=init_weights(fan_in, fan_out, rng_seed, uniform=uniform),
            activation=Activation.parse(activation),
            bias=None if bn is not None else np.zeros(fan_out),
            bn=bn,
            dropout=dropout,
            output=output,
        )


def weight_average(layer: DenseLayer, inputs: Tensor) -> Tensor:
    """a = inputs @ theta^T (+ bias)."""
    if inputs.ndim != 2 or inputs.shape[1] != layer.fan_in:
        raise DimensionError(
            f"layer expects [T_mb, {layer.fan_in}] input, got {inputs.shape}"
        )
    a = inputs @ layer.theta.T
    if layer.bias is not None:
        a = a + layer.bias
    return a


def fc_forward(
    layer: DenseLayer,
    inputs: Tensor,
    train: bool,
    *,
    residual_a: Optional[Tensor] = None,
    residual_y: Optional[Tensor] = None,
    rng: SeedLike = None,
) -> Tensor:
    """
    Forward one dense layer.

    Args:
        layer: Layer to run; its cache is refreshed
        inputs: [T_mb, F_in]
        train: Batch statistics and dropout in train mode, running stats otherwise
        residual_a: Skip term added to the pre-activation
        residual_y: Skip term added to the layer output (after batch norm)
        rng: Generator for the dropout mask

    Returns:
        y: [T_mb, F_out]
    """
    inputs = as_tensor(inputs)
    dropped, mask = dropout_apply(inputs, layer.dropout, train, rng, layer.frozen_mask)
    a = weight_average(layer, dropped)
    if residual_a is not None:
        a = a + residual_a
    if layer.probe is not None:
        a = a + layer.probe
    if layer.output is not None:
        h = output_function(layer.output, a)
        y = h
    else:
        h = activate(layer.activation, a)
        y = bn_forward(h, layer.bn, train) if layer.bn is not None else h
    if residual_y is not None:
        if residual_y.shape != y.shape:
            raise DimensionError(
                f"skip term {residual_y.shape} does not match {y.shape}"
            )
        y = y + residual_y
    layer.cache = DenseCache(inputs=dropped, a=a, h=h, y=y, mask=mask)
    return y


def output_delta(loss_kind: Loss, h_out: Tensor, targets: Tensor, T_mb: int) -> Tensor:
    """
    Error rate of the output layer, (h - y) / T_mb.

    The same expression holds for MSE with identity output and for both
    cross-entropy kinds with (per-bin-group) softmax outputs.
    """
    if h_out.shape != targets.shape:
        raise DimensionError(
            f"outputs {h_out.shape} and targets {targets.shape} differ"
        )
    return (h_out - targets) / T_mb


def input_upstream(layer: DenseLayer, delta: Tensor) -> Tensor:
    """Gradient with respect to the layer's (pre-dropout) input: delta @ theta."""
    up = delta @ layer.theta
    mask = layer.cache.mask
    if mask is not None and layer.dropout > 0.0:
        up = up * mask.scale
    return up


def delta_from_upstream(
    bn: Optional[BatchNormState],
    a: Tensor,
    activation: ActivationLike,
    upstream: Tensor,
) -> Tensor:
    """delta = g'(a) * J(upstream), with J the identity when batch norm is off."""
    dh = bn_jacobian_contract(bn, upstream) if bn is not None else upstream
    return activate_prime(activation, a) * dh


def hidden_delta(
    layer_above: DenseLayer,
    delta_above: Tensor,
    bn_below: Optional[BatchNormState],
    a_below: Tensor,
    g_kind: ActivationLike,
) -> Tensor:
    """
    Error rate of a hidden layer from the one above it.

    Computes theta^T delta_above per sample, contracts it with the batch-norm
    Jacobian (the sum over t' lives there), then scales by g'(a_below).
    """
    if layer_above.cache.a is None or layer_above.cache.a.shape != delta_above.shape:
        raise StateError("hidden delta needs a fresh forward cache on the layer above")
    upstream = input_upstream(layer_above, delta_above)
    return delta_from_upstream(bn_below, a_below, g_kind, upstream)


def weight_grad(delta: Tensor, y_below: Tensor) -> Tensor:
    """Delta theta[f, f'] = sum_t delta[t, f] * y_below[t, f']."""
    if delta.shape[0] != y_below.shape[0]:
        raise DimensionError(f"batch sizes differ: {delta.shape} vs {y_below.shape}")
    return delta.T @ y_below


def coeff_grads(
    theta_above: Tensor, delta_above: Tensor, h_tilde: Tensor
) -> Tuple[Tensor, Tensor]:
    """
    Batch-norm coefficient gradients from the layer above.

    Returns:
        (d_gamma, d_beta) with d_gamma[f] = sum_t sum_f' theta[f', f] h_tilde[t, f]
        delta[t, f'] and d_beta[f] = sum_t sum_f' theta[f', f] delta[t, f'].
    """
    upstream = delta_above @ theta_above
    return (upstream * h_tilde).sum(axis=0), upstream.sum(axis=0)


class SkipFormulation(str, Enum):
    """Where a two-layer skip connection joins the main path."""

    NON_STANDARD = "non_standard"  # y[s+2] += y[s]
    STANDARD = "standard"  # a[s+2] += a[s]


def resnet_skip_forward(
    first: DenseLayer,
    second: DenseLayer,
    inputs: Tensor,
    formulation: SkipFormulation,
    train: bool,
    source_preactivation: Optional[Tensor] = None,
    rng: SeedLike = None,
) -> Tensor:
    """
    Run two consecutive layers with a skip connection around them.

    NON_STANDARD adds ``inputs`` to the second layer's batch-norm output;
    STANDARD adds ``source_preactivation`` (the a that produced ``inputs``) to
    the second layer's pre-activation.

    Raises:
        DimensionError: If the block does not preserve the width.
        ConfigError: If STANDARD is asked for without a source pre-activation.
    """
    if second.fan_out != inputs.shape[1]:
        raise DimensionError(
            f"skip block maps width {inputs.shape[1]} to {second.fan_out}; "
            "they must match"
        )
    middle = fc_forward(first, inputs, train, rng=rng)
    if formulation is SkipFormulation.NON_STANDARD:
        return fc_forward(second, middle, train, residual_y=inputs, rng=rng)
    if source_preactivation is None:
        raise ConfigError(
            "the standard skip needs the pre-activation of its source layer"
        )
    return fc_forward(second, middle, train, residual_a=source_preactivation, rng=rng)


def resnet_skip_delta(
    formulation: SkipFormulation,
    first: DenseLayer,
    second: DenseLayer,
    delta_second: Tensor,
    source: Optional[DenseLayer] = None,
    upstream_second: Optional[Tensor] = None,
) -> Tensor:
    """
    Error rate at the source of a skip block.

    Args:
        formulation: Skip flavour used in the forward
        first: First layer inside the block
        second: Second layer inside the block (skip target)
        delta_second: Error rate of ``second``
        source: Layer that produced the block input; None for the raw input
        upstream_second: Gradient on ``second``'s output (NON_STANDARD only)

    Returns:
        delta of ``source`` (gradient on the block input when ``source`` is None).
    """
    if first.cache.a is None:
        raise StateError("skip block backward needs a fresh forward cache")
    delta_first = hidden_delta(
        second, delta_second, first.bn, first.cache.a, first.activation
    )
    upstream = input_upstream(first, delta_first)
    if formulation is SkipFormulation.NON_STANDARD:
        if upstream_second is None:
            raise ConfigError(
                "the non-standard skip needs the gradient on the block output"
            )
        upstream = upstream + upstream_second
    if source is None:
        if formulation is SkipFormulation.STANDARD:
            raise ConfigError("the standard skip cannot start at the raw input")
        return upstream
    if source.cache.a is None:
        raise StateError("skip block backward needs the source layer's forward cache")
    delta = delta_from_upstream(source.bn, source.cache.a, source.activation, upstream)
    if formulation is SkipFormulation.STANDARD:
        delta = delta + delta_second
    return delta


@dataclass(frozen=True)
class SkipConnection:
    """
    Skip from representation ``source`` to ``source + 2``.

    Representation 0 is the raw input, representation k the output of layer
    k - 1 (0-based layer list).
    """

    source: int
    formulation: SkipFormulation = SkipFormulation.NON_STANDARD

    @property
    def target(self) -> int:
        return self.source + 2


class FeedForwardNet(Network):
    """Stack of hidden DenseLayers topped by an output DenseLayer."""

    family = "fnn"

    def __init__(
        self,
        layers: Sequence[DenseLayer],
        loss: Loss,
        skips: Sequence[SkipConnection] = (),
        dropout_seed: SeedLike = None,
    ) -> None:
        super().__init__(loss, dropout_seed)
        self.layers: List[DenseLayer] = list(layers)
        self.skips: List[SkipConnection] = list(skips)
        self._validate()
        self.deltas: Dict[int, Tensor] = {}

    @classmethod
    def create(
        cls,
        widths: Sequence[int],
        activation: ActivationLike,
        loss: Loss,
        *,
        batch_norm: bool = False,
        dropout: Sequence[float] = (),
        skips: Sequence[SkipConnection] = (),
        seed: SeedLike = 0,
        uniform: bool = False,
    ) -> "FeedForwardNet":
        """
        Build a network from layer widths.

        Args:
            widths: [F_0, F_1, ..., F_N]; the last width is the output layer
            activation: Hidden-layer non-linearity
            loss: Loss the output layer is trained against
            batch_norm: Batch-normalize every hidden layer
            dropout: Per-layer input drop probabilities (missing entries are 0)
            skips: Skip connections between representations
            seed: Seed for weights and dropout masks
            uniform: Uniform instead of normal weight initialisation
        """
        if len(widths) < 2:
            raise ConfigError(
                "a feedforward network needs at least input and output widths"
            )
        rng = make_rng(seed)
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            is_output = i == len(widths) - 2
            layers.append(
                DenseLayer.create(
                    fan_in,
                    fan_out,
                    activation,
                    batch_norm=batch_norm and not is_output,
                    dropout=dropout[i] if i < len(dropout) else 0.0,
                    output=loss if is_output else None,
                    rng_seed=rng,
                    uniform=uniform,
                )
            )
        return cls(layers, loss, skips, dropout_seed=rng)

    def _validate(self) -> None:
        if not self.layers or self.layers[-1].output is None:
            raise ConfigError("the last layer must be an output layer")
        for lower, upper in zip(self.layers[:-1], self.layers[1:]):
            if lower.fan_out != upper.fan_in:
                raise DimensionError(
                    f"layer widths do not chain: {lower.fan_out} -> {upper.fan_in}"
                )
        widths = [self.layers[0].fan_in] + [layer.fan_out for layer in self.layers]
        hidden = len(self.layers) - 1
        for skip in self.skips:
            if skip.source < 0 or skip.target > hidden:
                raise ConfigError(
                    f"skip {skip.source}->{skip.target} must end on a hidden layer "
                    f"(representations 0..{hidden})"
                )
            if widths[skip.source] != widths[skip.target]:
                raise DimensionError(
                    f"skip {skip.source}->{skip.target} joins widths "
                    f"{widths[skip.source]} and {widths[skip.target]}"
                )
            if skip.formulation is SkipFormulation.STANDARD and skip.source == 0:
                raise ConfigError("the standard skip cannot start at the raw input")

    def _skip_into(self, representation: int) -> Optional[SkipConnection]:
        for skip in self.skips:
            if skip.target == representation:
                return skip
        return None

    def forward(self, inputs: Tensor, train: bool) -> Tensor:
        reps: List[Tensor] = [as_tensor(inputs)]
        pre: List[Optional[Tensor]] = [None]
        for k, layer in enumerate(self.layers, start=1):
            skip = self._skip_into(k)
            residual_a = residual_y = None
            if skip is not None and skip.formulation is SkipFormulation.STANDARD:
                residual_a = pre[skip.source]
            elif skip is not None:
                residual_y = reps[skip.source]
            y = fc_forward(
                layer,
                reps[-1],
                train,
                residual_a=residual_a,
                residual_y=residual_y,
                rng=self.dropout_rng,
            )
            reps.append(y)
            pre.append(layer.cache.a)
        return reps[-1]

    def backward(self, targets: Tensor) -> Dict[str, Tensor]:
        """
        Error rates and gradients for the cached training forward.

        Fills ``self.deltas`` with the error rate of every layer.
        """
        top = self.layers[-1]
        if top.cache.h is None:
            raise StateError("backward called before a forward pass")
        T_mb = top.cache.h.shape[0]
        n = len(self.layers)
        dy: Dict[int, Tensor] = {}
        extra_delta: Dict[int, Tensor] = {}
        grads: Dict[str, Tensor] = {}
        self.deltas = {}

        for k in range(n, 0, -1):
            layer = self.layers[k - 1]
            cache = layer.cache
            if cache.a is None or cache.inputs is None:
                raise StateError(f"layer {k - 1} has no forward cache")
            if k == n:
                delta = output_delta(self.loss_spec, cache.h, as_tensor(targets), T_mb)
            else:
                if k not in dy:
                    raise StateError(
                        f"gradient on layer {k - 1} output read before written"
                    )
                upstream = dy.pop(k)
                if layer.bn is not None:
                    d_gamma, d_beta = bn_coeff_grads(layer.bn, upstream)
                    grads[f"layers.{k - 1}.bn.gamma"] = d_gamma
                    grads[f"layers.{k - 1}.bn.beta"] = d_beta
                delta = delta_from_upstream(
                    layer.bn, cache.a, layer.activation, upstream
                )
                if k in extra_delta:
                    delta = delta + extra_delta.pop(k)
            self.deltas[k - 1] = delta

            grads[f"layers.{k - 1}.theta"] = weight_grad(delta, cache.inputs)
            if layer.bias is not None:
                grads[f"layers.{k - 1}.bias"] = delta.sum(axis=0)

            skip = self._skip_into(k)
            if skip is not None and skip.formulation is SkipFormulation.STANDARD:
                extra_delta[skip.source] = extra_delta.get(skip.source, 0.0) + delta
            elif skip is not None:
                dy[skip.source] = dy.get(skip.source, 0.0) + upstream
            if k > 1:
                dy[k - 1] = dy.get(k - 1, 0.0) + input_upstream(layer, delta)

        return self._ordered(grads)

    def parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            params[f"layers.{i}.theta"] = layer.theta
            if layer.bias is not None:
                params[f"layers.{i}.bias"] = layer.bias
            if layer.bn is not None:
                params[f"layers.{i}.bn.gamma"] = layer.bn.gamma
                params[f"layers.{i}.bn.beta"] = layer.bn.beta
        return params

    def bn_states(self) -> Dict[str, BatchNormState]:
        return {
            f"layers.{i}.bn": layer.bn
            for i, layer in enumerate(self.layers)
            if layer.bn is not None
        }

    def kinked_preactivations(self) -> List[Tensor]:
        return [
            layer.cache.a
            for layer in self.layers[:-1]
            if layer.activation.kinked and layer.cache.a is not None
        ]

    def freeze_dropout(self, frozen: bool) -> None:
        for layer in self.layers:
            layer.frozen_mask = layer.cache.mask if frozen else None

    def describe(self) -> List[Dict[str, str]]:
        rows = []
        for i, layer in enumerate(self.layers):
            kind = "output" if layer.output is not None else "dense"
            if layer.output is not None:
                detail = layer.output.kind.value
            else:
                detail = layer.activation.kind.value
                if layer.bn is not None:
                    detail += " + bn"
            rows.append(
                {
                    "layer": str(i),
                    "kind": kind,
                    "shape": f"{layer.fan_in} -> {layer.fan_out}",
                    "detail": detail,
                }
            )
        return rows
