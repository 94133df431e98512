"""
Convolutional layers, pooling, and the convolutional network.

Feature maps are [T_mb, F, N, T]. Layer outputs are stored without padding;
a convolution pads its input on the fly and caches the padded copy, and every
error rate is indexed like the (unpadded) pre-activation it belongs to.

A CNN is an ordered list of ConvLayer, PoolLayer and DenseLayer objects. The
TowardsFC layer is a ConvLayer whose window spans the whole map; its 1 x 1
output is flattened for the fully-connected layers above it.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..utils.logger import get_logger
from .batchnorm import BatchNormMode, BatchNormState, bn_coeff_grads, bn_forward
from .errors import ConfigError, DimensionError, StateError, UnsupportedConfigError
from .fnn import (
    DenseLayer,
    delta_from_upstream,
    fc_forward,
    input_upstream,
    output_delta,
)
from .model import Network
from .nn_math import (
    Activation,
    ActivationLike,
    Loss,
    SeedLike,
    activate,
    init_weights,
    make_rng,
)
from .tensor import (
    ConvGeometry,
    IndexArray,
    Tensor,
    as_tensor,
    col2im,
    crop2d,
    im2col,
    pad2d,
    pool_rows,
)

logger = get_logger(__name__)


class ConvPath(str, Enum):
    """Convolution kernel: shifted-slice sums or im2col + one matrix product."""

    NAIVE = "naive"
    GEMM = "gemm"


class PoolKind(str, Enum):
    MAX = "max"
    AVERAGE = "average"


@dataclass
class ConvCache:
    input_padded: Optional[Tensor] = None
    a: Optional[Tensor] = None
    h: Optional[Tensor] = None
    y: Optional[Tensor] = None


@dataclass
class ConvLayer:
    """
    Convolution followed by g and optional per-feature-map batch norm.

    Attributes:
        theta: Weights [F_out, F_in, R, R]
        geometry: Window geometry over the layer input
        activation: Non-linearity
        bias: Per-output-feature bias, only without batch norm
        bn: Optional batch norm over (sample, width, height)
        towards_fc: Window covers the whole map; output is flattened
        probe: Additive perturbation on a, for finite-difference checks
    """

    theta: Tensor
    geometry: ConvGeometry
    activation: Activation = field(default_factory=lambda: Activation.parse("relu"))
    bias: Optional[Tensor] = None
    bn: Optional[BatchNormState] = None
    towards_fc: bool = False
    probe: Optional[Tensor] = None
    cache: ConvCache = field(default_factory=ConvCache)

    @classmethod
    def create(
        cls,
        in_features: int,
        out_features: int,
        geometry: ConvGeometry,
        activation: ActivationLike = "relu",
        *,
        batch_norm: bool = False,
        towards_fc: bool = False,
        rng_seed: SeedLike = None,
        uniform: bool = False,
    ) -> "ConvLayer":
        R = geometry.receptive_field
        theta = init_weights(
            in_features * R * R,
            out_features * R * R,
            rng_seed,
            uniform=uniform,
            shape=(out_features, in_features, R, R),
        )
        bn = None
        if batch_norm:
            bn = BatchNormState.create(out_features, BatchNormMode.PER_FEATURE_MAP)
        return cls(
            theta=theta,
            geometry=geometry,
            activation=Activation.parse(activation),
            bias=None if bn is not None else np.zeros(out_features),
            bn=bn,
            towards_fc=towards_fc,
        )

    @property
    def in_features(self) -> int:
        return int(self.theta.shape[1])

    @property
    def out_features(self) -> int:
        return int(self.theta.shape[0])

    @property
    def out_shape(self) -> Tuple[int, int, int]:
        return (self.out_features, self.geometry.out_width, self.geometry.out_height)


@dataclass
class PoolCache:
    input_shape: Optional[Tuple[int, ...]] = None
    argmax: Optional[IndexArray] = None


@dataclass
class PoolLayer:
    """Max or average pooling with window R_P and stride S_P (no padding)."""

    receptive_field: int
    stride: int
    kind: PoolKind = PoolKind.MAX
    cache: PoolCache = field(default_factory=PoolCache)

    def geometry(self, in_width: int, in_height: int) -> ConvGeometry:
        return ConvGeometry(in_width, in_height, self.receptive_field, self.stride, 0)


CnnLayer = Union[ConvLayer, PoolLayer, DenseLayer]


def _check_conv_input(layer: ConvLayer, x: Tensor) -> None:
    g = layer.geometry
    expected = (layer.in_features, g.padded_width, g.padded_height)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise DimensionError(
            f"convolution expects padded input [T_mb, {expected}], got {x.shape}"
        )


def _taps(offset: int, stride: int, count: int) -> slice:
    return slice(offset, offset + stride * (count - 1) + 1, stride)


def conv_naive(x_padded: Tensor, theta: Tensor, geom: ConvGeometry) -> Tensor:
    """
    a[t,f,l,m] = sum_{f',j,k} theta[f,f',j,k] x[t,f',S*l+j,S*m+k].

    Contracted one (j,k) slice at a time.
    """
    R, S = geom.receptive_field, geom.stride
    N_p, T_p = geom.out_width, geom.out_height
    a = np.zeros((x_padded.shape[0], theta.shape[0], N_p, T_p))
    for j in range(R):
        for k in range(R):
            patch = x_padded[:, :, _taps(j, S, N_p), _taps(k, S, T_p)]
            a += np.einsum("fg,tglm->tflm", theta[:, :, j, k], patch)
    return a


def conv_gemm(x_padded: Tensor, theta: Tensor, geom: ConvGeometry) -> Tensor:
    """Same contraction as conv_naive, as im2col followed by one matrix product."""
    cols = im2col(x_padded, geom)
    flat = cols @ theta.reshape(theta.shape[0], -1).T
    T_mb = x_padded.shape[0]
    flat = flat.reshape(T_mb, geom.out_width, geom.out_height, -1)
    return flat.transpose(0, 3, 1, 2)


def conv_input_grad(theta: Tensor, delta: Tensor, geom: ConvGeometry) -> Tensor:
    """Gradient on the padded convolution input (full correlation of delta, theta)."""
    T_mb, F = delta.shape[:2]
    rows = delta.transpose(0, 2, 3, 1).reshape(T_mb, -1, F)
    return col2im(rows @ theta.reshape(F, -1), geom)


def conv_forward(
    layer: ConvLayer,
    input_padded: Tensor,
    path: ConvPath = ConvPath.GEMM,
    train: bool = True,
    residual_a: Optional[Tensor] = None,
) -> Tensor:
    """
    Forward one convolution layer on an already padded input.

    Args:
        layer: Layer to run; its cache is refreshed
        input_padded: [T_mb, F_in, N + 2P, T + 2P]
        path: Kernel choice (both agree to rounding)
        train: Batch statistics in train mode, running statistics otherwise
        residual_a: Skip term added to the pre-activation

    Returns:
        y: [T_mb, F_out, N_p, T_p], unpadded
    """
    x = as_tensor(input_padded)
    _check_conv_input(layer, x)
    kernel = conv_gemm if path is ConvPath.GEMM else conv_naive
    a = kernel(x, layer.theta, layer.geometry)
    if layer.bias is not None:
        a = a + layer.bias.reshape(1, -1, 1, 1)
    if residual_a is not None:
        if residual_a.shape != a.shape:
            raise DimensionError(
                f"skip term {residual_a.shape} does not match {a.shape}"
            )
        a = a + residual_a
    if layer.probe is not None:
        a = a + layer.probe
    h = activate(layer.activation, a)
    y = bn_forward(h, layer.bn, train) if layer.bn is not None else h
    layer.cache = ConvCache(input_padded=x, a=a, h=h, y=y)
    return y


def pool_forward(layer: PoolLayer, inputs: Tensor, train: bool = True) -> Tensor:
    """
    Pool every R_P x R_P window.

    Max pooling caches the winning (j, k) of each window; average pooling
    returns the window mean.
    """
    x = as_tensor(inputs)
    if x.ndim != 4:
        raise DimensionError(f"pooling expects [T_mb, F, N, T], got {x.shape}")
    R, S = layer.receptive_field, layer.stride
    if layer.kind is PoolKind.MAX:
        values, argmax = pool_rows(x, R, S)
    else:
        layer.geometry(x.shape[2], x.shape[3])
        windows = sliding_window_view(x, (R, R), axis=(-2, -1))[..., ::S, ::S, :, :]
        values = windows.sum(axis=(-2, -1)) / (R * R)
        argmax = None
    layer.cache = PoolCache(input_shape=x.shape, argmax=argmax)
    return values


def pool_route(layer: PoolLayer, upstream: Tensor) -> Tensor:
    """
    Send the gradient on pooled outputs back to the pooling input.

    Max pooling deposits each entry at its window's argmax only; average
    pooling spreads it evenly over the window.
    """
    shape = layer.cache.input_shape
    if shape is None:
        raise StateError("pooling backward needs a forward cache")
    R, S = layer.receptive_field, layer.stride
    out = np.zeros(shape)
    N_p, T_p = upstream.shape[2:]
    if layer.kind is PoolKind.MAX:
        argmax = layer.cache.argmax
        if argmax is None or argmax.shape[:-1] != upstream.shape:
            raise StateError("stale pooling argmax cache")
        t, f, l, m = np.indices(upstream.shape, sparse=True)
        np.add.at(out, (t, f, S * l + argmax[..., 0], S * m + argmax[..., 1]), upstream)
        return out
    share = upstream / (R * R)
    for j in range(R):
        for k in range(R):
            out[:, :, _taps(j, S, N_p), _taps(k, S, T_p)] += share
    return out


def delta_fc_to_pool(theta: Tensor, delta_above: Tensor) -> Tensor:
    """
    Gradient on pool outputs from the TowardsFC layer above.

    delta[t,f,l,m] = sum_f' theta[f',f,l,m] delta_above[t,f']; pool outputs are
    never batch-normalized and have no g, so nothing else applies.
    """
    if (
        theta.ndim != 4
        or delta_above.ndim != 2
        or delta_above.shape[1] != theta.shape[0]
    ):
        raise DimensionError(f"cannot contract {theta.shape} with {delta_above.shape}")
    return np.einsum("gflm,tg->tflm", theta, delta_above)


def delta_pool_to_conv(
    pool: PoolLayer,
    delta_above: Tensor,
    bn: Optional[BatchNormState],
    a_below: Tensor,
    g_kind: ActivationLike,
) -> Tensor:
    """Error rate of the convolution feeding a pool: route, batch-norm Jacobian, g'."""
    return delta_from_upstream(bn, a_below, g_kind, pool_route(pool, delta_above))


def conv_upstream(layer_above: ConvLayer, delta_above: Tensor) -> Tensor:
    """Gradient on the (unpadded) input of ``layer_above``."""
    if layer_above.cache.a is None or layer_above.cache.a.shape != delta_above.shape:
        raise StateError("stale convolution cache on the layer above")
    geom = layer_above.geometry
    return crop2d(conv_input_grad(layer_above.theta, delta_above, geom), geom.padding)


def delta_conv_to_conv(
    layer_above: ConvLayer,
    delta_above: Tensor,
    bn: Optional[BatchNormState],
    a_below: Tensor,
    g_kind: ActivationLike,
) -> Tensor:
    """Error rate of a convolution feeding another convolution."""
    upstream = conv_upstream(layer_above, delta_above)
    return delta_from_upstream(bn, a_below, g_kind, upstream)


def delta_conv_to_pool(layer_above: ConvLayer, delta_above: Tensor) -> Tensor:
    """
    Gradient on pool outputs from the convolution above them.

    Raises:
        UnsupportedConfigError: If the convolution stride is not 1.
    """
    if layer_above.geometry.stride != 1:
        raise UnsupportedConfigError(
            "convolution above a pool must have stride 1, "
            f"got {layer_above.geometry.stride}"
        )
    return conv_upstream(layer_above, delta_above)


def conv_weight_grad(
    delta: Tensor, y_below_padded: Tensor, geom: ConvGeometry
) -> Tensor:
    """
    Delta theta[f,f',j,k] = sum_{t,l,m} delta[t,f,l,m] y[t,f',S*l+j,S*m+k].

    ``y_below_padded`` is the padded input the forward read (raw input for the
    first layer, pool or convolution output otherwise).
    """
    cols = im2col(y_below_padded, geom)
    T_mb, F = delta.shape[:2]
    if cols.shape[:2] != (T_mb, delta.shape[2] * delta.shape[3]):
        raise DimensionError(
            f"delta {delta.shape} does not match input {y_below_padded.shape}"
        )
    rows = delta.transpose(0, 2, 3, 1).reshape(T_mb, -1, F)
    R = geom.receptive_field
    return np.einsum("tpf,tpc->fc", rows, cols).reshape(F, -1, R, R)


def conv_coeff_grads(
    above: Union[ConvLayer, PoolLayer], delta_above: Tensor, bn: BatchNormState
) -> Tuple[Tensor, Tensor]:
    """
    Batch-norm coefficient gradients of a convolution from the layer above it.

    The gradient on the batch-norm output is rebuilt from the layer above (a
    convolution or a pool), then reduced to (d_gamma, d_beta).
    """
    if isinstance(above, PoolLayer):
        upstream = pool_route(above, delta_above)
    else:
        upstream = conv_upstream(above, delta_above)
    return bn_coeff_grads(bn, upstream)


class ResNetDirection(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


def resnet_conv_block(
    block: Sequence[ConvLayer],
    tensor: Tensor,
    direction: ResNetDirection,
    source: ConvLayer,
    train: bool = True,
    path: ConvPath = ConvPath.GEMM,
) -> Tensor:
    """
    Bottleneck residual module: 1x1 -> 3x3 (same) -> 1x1 convolutions.

    The source layer's pre-activation is added to the last convolution's
    pre-activation.

    Args:
        block: The three convolutions
        tensor: FORWARD: the source output; BACKWARD: the error rate of the
            last convolution
        direction: Which pass to run
        source: Convolution whose output enters the block
        train: Forward mode
        path: Convolution kernel

    Returns:
        FORWARD: block output. BACKWARD: error rate of ``source``, the in-block
        chain plus the skip term.
    """
    if len(block) != 3:
        raise ConfigError(f"a residual module has 3 convolutions, got {len(block)}")
    first, middle, last = block
    if source.cache.a is None:
        raise StateError("residual module needs the source layer's forward cache")
    if last.out_shape != source.out_shape:
        raise DimensionError(
            f"residual module maps {source.out_shape} to {last.out_shape}"
        )
    if direction is ResNetDirection.FORWARD:
        x = tensor
        for i, layer in enumerate(block):
            residual = source.cache.a if i == 2 else None
            padded = pad2d(x, layer.geometry.padding)
            x = conv_forward(layer, padded, path, train, residual)
        return x
    delta_middle = delta_conv_to_conv(
        last, tensor, middle.bn, middle.cache.a, middle.activation
    )
    delta_first = delta_conv_to_conv(
        middle, delta_middle, first.bn, first.cache.a, first.activation
    )
    delta_source = delta_conv_to_conv(
        first, delta_first, source.bn, source.cache.a, source.activation
    )
    return delta_source + tensor


@dataclass(frozen=True)
class ResidualSkip:
    """Skip from convolution ``source`` to convolution ``source + 3``."""

    source: int

    @property
    def target(self) -> int:
        return self.source + 3


class ConvNet(Network):
    """
    Convolutional network over [T_mb, F, N, T] inputs.

    The layer list must contain convolutions and pools, exactly one TowardsFC
    convolution, then dense layers ending in the output layer.
    """

    family = "cnn"

    def __init__(
        self,
        input_shape: Sequence[int],
        layers: Sequence[CnnLayer],
        loss: Loss,
        skips: Sequence[ResidualSkip] = (),
        path: ConvPath = ConvPath.GEMM,
        dropout_seed: SeedLike = None,
    ) -> None:
        super().__init__(loss, dropout_seed)
        self.input_shape = tuple(int(v) for v in input_shape)
        self.layers: List[CnnLayer] = list(layers)
        self.skips: List[ResidualSkip] = list(skips)
        self.path = path
        self._validate()
        self.deltas: Dict[int, Tensor] = {}

    @classmethod
    def create(
        cls,
        input_shape: Sequence[int],
        layers: Sequence[Mapping[str, Any]],
        loss: Loss,
        *,
        skips: Sequence[int] = (),
        seed: SeedLike = 0,
        path: ConvPath = ConvPath.GEMM,
        uniform: bool = False,
    ) -> "ConvNet":
        """
        Build a CNN from layer descriptions.

        Each description is a mapping with ``kind`` one of ``conv``, ``pool``,
        ``towards_fc``, ``dense`` or ``output``:

        - conv: features, receptive_field, stride (1), padding (0) or
          ``same: true``, activation, batch_norm
        - pool: receptive_field, stride (defaults to receptive_field),
          pool (``max`` or ``average``)
        - towards_fc: features, activation, batch_norm
        - dense: features, activation, batch_norm, dropout
        - output: features

        Raises:
            ConfigError: On unknown kinds or missing keys.
            GeometryError: On non-integral geometry.
        """
        rng = make_rng(seed)
        F, N, T = (int(v) for v in input_shape)
        built: List[CnnLayer] = []
        flat: Optional[int] = None
        for i, spec in enumerate(layers):
            kind = str(spec.get("kind", ""))
            try:
                if kind == "conv":
                    R = int(spec["receptive_field"])
                    if spec.get("same", False):
                        geom = ConvGeometry.same(N, T, R)
                    else:
                        stride = int(spec.get("stride", 1))
                        padding = int(spec.get("padding", 0))
                        geom = ConvGeometry(N, T, R, stride, padding)
                    layer: CnnLayer = ConvLayer.create(
                        F,
                        int(spec["features"]),
                        geom,
                        spec.get("activation", "relu"),
                        batch_norm=bool(spec.get("batch_norm", False)),
                        rng_seed=rng,
                        uniform=uniform,
                    )
                    F, N, T = layer.out_shape
                elif kind == "pool":
                    R = int(spec["receptive_field"])
                    layer = PoolLayer(
                        R, int(spec.get("stride", R)), PoolKind(spec.get("pool", "max"))
                    )
                    geom = layer.geometry(N, T)
                    N, T = geom.out_width, geom.out_height
                elif kind == "towards_fc":
                    layer = ConvLayer.create(
                        F,
                        int(spec["features"]),
                        ConvGeometry.towards_fc(N, T),
                        spec.get("activation", "relu"),
                        batch_norm=bool(spec.get("batch_norm", False)),
                        towards_fc=True,
                        rng_seed=rng,
                        uniform=uniform,
                    )
                    flat = layer.out_features
                elif kind in ("dense", "output"):
                    if flat is None:
                        raise ConfigError(
                            f"layer {i}: dense layers need a towards_fc layer below"
                        )
                    is_output = kind == "output"
                    layer = DenseLayer.create(
                        flat,
                        int(spec["features"]),
                        spec.get("activation", "relu"),
                        batch_norm=(
                            bool(spec.get("batch_norm", False)) and not is_output
                        ),
                        dropout=float(spec.get("dropout", 0.0)),
                        output=loss if is_output else None,
                        rng_seed=rng,
                        uniform=uniform,
                    )
                    flat = layer.fan_out
                else:
                    raise ConfigError(f"layer {i}: unknown CNN layer kind '{kind}'")
            except KeyError as e:
                raise ConfigError(f"layer {i} ({kind}): missing key {e}") from e
            except ValueError as e:
                raise ConfigError(f"layer {i} ({kind}): {e}") from e
            built.append(layer)
        return cls(
            input_shape,
            built,
            loss,
            [ResidualSkip(s) for s in skips],
            path=path,
            dropout_seed=rng,
        )

    def _validate(self) -> None:
        F, N, T = self.input_shape
        towards = [
            i
            for i, layer in enumerate(self.layers)
            if isinstance(layer, ConvLayer) and layer.towards_fc
        ]
        if len(towards) != 1:
            raise ConfigError(
                f"a CNN needs exactly one towards_fc layer, found {len(towards)}"
            )
        top = self.layers[-1]
        if not isinstance(top, DenseLayer) or top.output is None:
            raise ConfigError("the last CNN layer must be the output layer")
        split = towards[0]
        for i, layer in enumerate(self.layers):
            below = self.layers[i - 1] if i > 0 else None
            if i > split:
                if not isinstance(layer, DenseLayer):
                    raise ConfigError(
                        f"layer {i}: only dense layers may follow towards_fc"
                    )
                continue
            if isinstance(layer, DenseLayer):
                raise ConfigError(f"layer {i}: dense layer below towards_fc")
            if isinstance(layer, PoolLayer):
                if isinstance(below, PoolLayer):
                    raise ConfigError(f"layer {i}: pool directly above pool")
                geom = layer.geometry(N, T)
                N, T = geom.out_width, geom.out_height
                continue
            g = layer.geometry
            if (layer.in_features, g.in_width, g.in_height) != (F, N, T):
                raise DimensionError(
                    f"layer {i}: expects "
                    f"{(layer.in_features, g.in_width, g.in_height)}, "
                    f"receives {(F, N, T)}"
                )
            if isinstance(below, PoolLayer) and g.stride != 1:
                raise UnsupportedConfigError(
                    f"layer {i}: convolution above a pool must have stride 1"
                )
            F, N, T = layer.out_shape
        for skip in self.skips:
            self._validate_skip(skip)

    def _validate_skip(self, skip: ResidualSkip) -> None:
        span = self.layers[skip.source : skip.target + 1]
        if len(span) != 4 or not all(
            isinstance(layer, ConvLayer) and not layer.towards_fc for layer in span
        ):
            raise ConfigError(
                f"residual module {skip.source}->{skip.target} "
                "must span four plain convolutions"
            )
        source, first, middle, last = span
        fields = [layer.geometry.receptive_field for layer in (first, middle, last)]
        if fields != [1, 3, 1]:
            raise ConfigError(
                "a residual module is a 1x1 -> 3x3 -> 1x1 convolution stack"
            )
        if last.out_shape != source.out_shape:
            raise DimensionError(
                f"residual module maps {source.out_shape} to {last.out_shape}"
            )

    def _skip_into(self, index: int) -> Optional[ResidualSkip]:
        for skip in self.skips:
            if skip.target == index:
                return skip
        return None

    def forward(self, inputs: Tensor, train: bool) -> Tensor:
        x = as_tensor(inputs)
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise DimensionError(
                f"CNN expects [T_mb, {self.input_shape}] input, got {x.shape}"
            )
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ConvLayer):
                skip = self._skip_into(i)
                residual = None
                if skip is not None:
                    source = self.layers[skip.source]
                    residual = source.cache.a  # type: ignore[union-attr]
                padded = pad2d(x, layer.geometry.padding)
                x = conv_forward(layer, padded, self.path, train, residual)
                if layer.towards_fc:
                    x = x.reshape(x.shape[0], -1)
            elif isinstance(layer, PoolLayer):
                x = pool_forward(layer, x, train)
            else:
                x = fc_forward(layer, x, train, rng=self.dropout_rng)
        return x

    def backward(self, targets: Tensor) -> Dict[str, Tensor]:
        """
        Error rates and gradients for the cached training forward.

        Walks the layers top-down, keeping the gradient on each layer output;
        ``self.deltas`` receives every layer's error rate (pool layers store
        the gradient on their output).
        """
        top = self.layers[-1]
        if not isinstance(top, DenseLayer) or top.cache.h is None:
            raise StateError("backward called before a forward pass")
        T_mb = top.cache.h.shape[0]
        dy: Dict[int, Tensor] = {}
        extra_delta: Dict[int, Tensor] = {}
        grads: Dict[str, Tensor] = {}
        self.deltas = {}

        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            below = self.layers[i - 1] if i > 0 else None
            if isinstance(layer, PoolLayer):
                upstream = dy.pop(i)
                self.deltas[i] = upstream
                dy[i - 1] = pool_route(layer, upstream)
                continue

            if isinstance(layer, DenseLayer):
                cache = layer.cache
                if layer.output is not None:
                    y = as_tensor(targets)
                    delta = output_delta(self.loss_spec, cache.h, y, T_mb)
                else:
                    upstream = dy.pop(i)
                    if layer.bn is not None:
                        d_gamma, d_beta = bn_coeff_grads(layer.bn, upstream)
                        grads[f"layers.{i}.bn.gamma"] = d_gamma
                        grads[f"layers.{i}.bn.beta"] = d_beta
                    delta = delta_from_upstream(
                        layer.bn, cache.a, layer.activation, upstream
                    )
                self.deltas[i] = delta
                grads[f"layers.{i}.theta"] = delta.T @ cache.inputs
                if layer.bias is not None:
                    grads[f"layers.{i}.bias"] = delta.sum(axis=0)
                up = input_upstream(layer, delta)
                if isinstance(below, ConvLayer) and below.towards_fc:
                    up = up.reshape(*up.shape, 1, 1)
                dy[i - 1] = up
                continue

            cache_c = layer.cache
            if cache_c.a is None or cache_c.input_padded is None:
                raise StateError(f"layer {i} has no forward cache")
            if i not in dy:
                raise StateError(f"gradient on layer {i} output read before written")
            upstream = dy.pop(i)
            if layer.bn is not None:
                d_gamma, d_beta = bn_coeff_grads(layer.bn, upstream)
                grads[f"layers.{i}.bn.gamma"] = d_gamma
                grads[f"layers.{i}.bn.beta"] = d_beta
            delta = delta_from_upstream(
                layer.bn, cache_c.a, layer.activation, upstream
            )
            if i in extra_delta:
                delta = delta + extra_delta.pop(i)
            self.deltas[i] = delta
            grads[f"layers.{i}.theta"] = conv_weight_grad(
                delta, cache_c.input_padded, layer.geometry
            )
            if layer.bias is not None:
                grads[f"layers.{i}.bias"] = delta.sum(axis=(0, 2, 3))
            skip = self._skip_into(i)
            if skip is not None:
                extra_delta[skip.source] = extra_delta.get(skip.source, 0.0) + delta
            if below is None:
                continue
            if isinstance(below, PoolLayer) and layer.towards_fc:
                dy[i - 1] = delta_fc_to_pool(layer.theta, delta.reshape(T_mb, -1))
            elif isinstance(below, PoolLayer):
                dy[i - 1] = delta_conv_to_pool(layer, delta)
            else:
                dy[i - 1] = conv_upstream(layer, delta)

        return self._ordered(grads)

    def parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            if isinstance(layer, PoolLayer):
                continue
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
            if not isinstance(layer, PoolLayer) and layer.bn is not None
        }

    def kinked_preactivations(self) -> List[Tensor]:
        probes = []
        for layer in self.layers:
            if isinstance(layer, PoolLayer) or layer.cache.a is None:
                continue
            if isinstance(layer, DenseLayer) and layer.output is not None:
                continue
            if layer.activation.kinked:
                probes.append(layer.cache.a)
        return probes

    def freeze_dropout(self, frozen: bool) -> None:
        for layer in self.layers:
            if isinstance(layer, DenseLayer):
                layer.frozen_mask = layer.cache.mask if frozen else None

    def describe(self) -> List[Dict[str, str]]:
        rows = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, PoolLayer):
                rows.append(
                    {
                        "layer": str(i),
                        "kind": f"{layer.kind.value} pool",
                        "shape": f"R={layer.receptive_field} S={layer.stride}",
                        "detail": "",
                    }
                )
            elif isinstance(layer, ConvLayer):
                g = layer.geometry
                rows.append(
                    {
                        "layer": str(i),
                        "kind": "towards_fc" if layer.towards_fc else "conv",
                        "shape": (
                            f"{layer.in_features}x{g.in_width}x{g.in_height} -> "
                            f"{layer.out_features}x{g.out_width}x{g.out_height}"
                        ),
                        "detail": (
                            f"R={g.receptive_field} S={g.stride} P={g.padding} "
                            f"{layer.activation.kind.value}"
                            + (" + bn" if layer.bn is not None else "")
                        ),
                    }
                )
            else:
                rows.append(
                    {
                        "layer": str(i),
                        "kind": "output" if layer.output is not None else "dense",
                        "shape": f"{layer.fan_in} -> {layer.fan_out}",
                        "detail": (
                            layer.output.kind.value
                            if layer.output is not None
                            else layer.activation.kind.value
                        ),
                    }
                )
        return rows
