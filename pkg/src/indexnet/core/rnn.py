"""
Recurrent networks unrolled over a (layer, time) grid.

Cell (nu, tau) reads the output of the cell below it at the same step and its
own output at the previous step. Every step feeds the top layer's output to a
dense output head, and the loss is summed over steps. Inputs and outputs are
[T_mb, F, T].

The forward and reverse sweeps here are shared with the LSTM; a family only
supplies its cell forward, its cell backward and its parameter layout.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

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
    Loss,
    SeedLike,
    init_lstm_diagonal,
    init_weights,
    make_rng,
    output_function,
)
from .tensor import Tensor, as_tensor

logger = get_logger(__name__)

Cell = Tuple[int, int]


class RecurrentWeights(Protocol):
    """What the shared sweeps need from a layer of any recurrent family."""

    @property
    def width(self) -> int: ...

    @property
    def fan_in(self) -> int: ...

    def weights(self) -> Dict[str, Tensor]: ...


@dataclass
class RecurrentLayer:
    """Weights of one plain RNN layer: spatial [F, F_below], temporal [F, F]."""

    theta_spatial: Tensor
    theta_temporal: Tensor
    bias: Optional[Tensor] = None

    @property
    def width(self) -> int:
        return int(self.theta_spatial.shape[0])

    @property
    def fan_in(self) -> int:
        return int(self.theta_spatial.shape[1])

    def weights(self) -> Dict[str, Tensor]:
        params = {
            "theta_spatial": self.theta_spatial,
            "theta_temporal": self.theta_temporal,
        }
        if self.bias is not None:
            params["bias"] = self.bias
        return params


@dataclass
class OutputHead:
    """Dense output map applied at every step: theta [F_N, F_L] plus bias."""

    theta: Tensor
    bias: Tensor


@dataclass
class RnnParams:
    """
    All weights of an unrolled recurrent network.

    Attributes:
        layers: One entry per hidden layer, bottom first
        head: Output map shared by all steps
        loss: Loss the head is trained against
        steps: Sequence length T the batch-norm states were made for
        bn: One batch-norm state per (layer, step) cell, empty when disabled
        probe: Per-cell additive perturbations used by finite-difference checks
    """

    layers: Sequence[RecurrentWeights]
    head: OutputHead
    loss: Loss
    steps: int
    bn: Dict[Cell, BatchNormState] = field(default_factory=dict)
    probe: Dict[Cell, Tensor] = field(default_factory=dict)

    @property
    def in_width(self) -> int:
        return self.layers[0].fan_in

    @property
    def out_width(self) -> int:
        return int(self.head.theta.shape[0])


@dataclass
class CellCache:
    x_below: Tensor
    y_prev: Optional[Tensor]
    a: Tensor
    h: Tensor
    y: Tensor


@dataclass
class UnrollCache:
    """Everything one forward leaves behind for the reverse sweep."""

    cells: Dict[Cell, CellCache]
    top: Dict[int, Tensor]
    outputs: Tensor
    train: bool


@dataclass
class RecurrentDeltas:
    """
    Reverse-sweep results.

    Attributes:
        a: Error rate per cell. RNN: gradient on the pre-activation. LSTM: a
           mapping of gate name to the gradient on that gate's pre-activation.
        h: Gradient on each cell's output h (before batch norm)
        y: Gradient on each cell's output y (after batch norm)
        out: Output-head error rate per step
        c: Cell-state gradient per cell (LSTM only)
    """

    a: Dict[Cell, object] = field(default_factory=dict)
    h: Dict[Cell, Tensor] = field(default_factory=dict)
    y: Dict[Cell, Tensor] = field(default_factory=dict)
    out: Dict[int, Tensor] = field(default_factory=dict)
    c: Dict[Cell, Tensor] = field(default_factory=dict)


CellForward = Callable[
    [int, int, Tensor, Optional[Tensor], Dict[Cell, CellCache]], CellCache
]
CellBackward = Callable[
    [int, int, Tensor, RecurrentDeltas], Tuple[Tensor, Optional[Tensor]]
]


def _check_inputs(params: RnnParams, inputs: Tensor) -> Tensor:
    x = as_tensor(inputs)
    if x.ndim != 3 or x.shape[1] != params.in_width:
        raise DimensionError(
            f"recurrent network expects [T_mb, {params.in_width}, T] input, "
            f"got {x.shape}"
        )
    if x.shape[2] < 1:
        raise DimensionError("sequences need at least one step")
    if params.bn and x.shape[2] != params.steps:
        raise DimensionError(
            f"batch-normalized recurrent network was built for {params.steps} steps, "
            f"got {x.shape[2]}"
        )
    return x


def unroll(
    params: RnnParams,
    inputs: Tensor,
    train: bool,
    cell_forward: CellForward,
    feedback: bool = False,
) -> UnrollCache:
    """
    Sweep the grid in (step, layer) order.

    With ``feedback`` the head output of step tau replaces the input of step
    tau + 1 (generation; eval mode only, needs F_N == F_0).
    """
    x = _check_inputs(params, inputs)
    if feedback and train:
        raise ConfigError(
            "generation mode feeds outputs back and is only available in eval mode"
        )
    if feedback and params.out_width != params.in_width:
        raise ConfigError(
            f"generation mode needs output width {params.out_width} == input width "
            f"{params.in_width}"
        )
    T_mb, _, T = x.shape
    cells: Dict[Cell, CellCache] = {}
    top: Dict[int, Tensor] = {}
    outputs = np.zeros((T_mb, params.out_width, T))
    for tau in range(T):
        below = outputs[:, :, tau - 1] if feedback and tau > 0 else x[:, :, tau]
        for nu in range(len(params.layers)):
            y_prev = cells[(nu, tau - 1)].y if tau > 0 else None
            cell = cell_forward(nu, tau, below, y_prev, cells)
            if params.bn:
                cell.y = bn_forward(cell.h, params.bn[(nu, tau)], train)
            else:
                cell.y = cell.h
            cells[(nu, tau)] = cell
            below = cell.y
        top[tau] = below
        a_out = below @ params.head.theta.T + params.head.bias
        outputs[:, :, tau] = output_function(params.loss, a_out)
    return UnrollCache(cells=cells, top=top, outputs=outputs, train=train)


def reverse_sweep(
    params: RnnParams,
    cache: UnrollCache,
    targets: Tensor,
    cell_backward: CellBackward,
) -> RecurrentDeltas:
    """
    Visit cells in reverse step order, then reverse layer order.

    Every cell's output gradient gathers the head (top layer), the cell above
    and the cell at the next step; reading one that was never written raises.
    ``cell_backward`` turns dh into the error rates of the cell and returns
    the gradients on (input from below, previous output).
    """
    y = as_tensor(targets)
    if y.shape != cache.outputs.shape:
        raise DimensionError(
            f"targets {y.shape} do not match outputs {cache.outputs.shape}"
        )
    if not cache.train:
        raise StateError("the reverse sweep needs a training-mode forward")
    T_mb, _, T = y.shape
    L = len(params.layers)
    deltas = RecurrentDeltas()
    dy: Dict[Cell, Tensor] = {}
    for tau in range(T - 1, -1, -1):
        d_out = (cache.outputs[:, :, tau] - y[:, :, tau]) / T_mb
        deltas.out[tau] = d_out
        dy[(L - 1, tau)] = dy.get((L - 1, tau), 0.0) + d_out @ params.head.theta
        for nu in range(L - 1, -1, -1):
            if (nu, tau) not in dy:
                raise StateError(f"gradient of cell ({nu}, {tau}) read before written")
            upstream = dy.pop((nu, tau))
            deltas.y[(nu, tau)] = upstream
            if params.bn:
                dh = bn_jacobian_contract(params.bn[(nu, tau)], upstream)
            else:
                dh = upstream
            deltas.h[(nu, tau)] = dh
            d_below, d_prev = cell_backward(nu, tau, dh, deltas)
            if nu > 0:
                dy[(nu - 1, tau)] = dy.get((nu - 1, tau), 0.0) + d_below
            if tau > 0 and d_prev is not None:
                dy[(nu, tau - 1)] = dy.get((nu, tau - 1), 0.0) + d_prev
    return deltas


def head_and_bn_grads(
    params: RnnParams, cache: UnrollCache, deltas: RecurrentDeltas
) -> Dict[str, Tensor]:
    """Output-head and per-cell batch-norm coefficient gradients."""
    grads: Dict[str, Tensor] = {
        "head.theta": sum(deltas.out[tau].T @ cache.top[tau] for tau in deltas.out),
        "head.bias": sum(deltas.out[tau].sum(axis=0) for tau in deltas.out),
    }
    for (nu, tau), state in params.bn.items():
        # bn_coeff_grads reads the h_tilde cached by the forward of that cell
        d_gamma, d_beta = bn_coeff_grads(state, deltas.y[(nu, tau)])
        grads[f"layers.{nu}.bn.{tau}.gamma"] = d_gamma
        grads[f"layers.{nu}.bn.{tau}.beta"] = d_beta
    return grads


def rnn_layers(params: RnnParams) -> List[RecurrentLayer]:
    layers = list(params.layers)
    if not all(isinstance(layer, RecurrentLayer) for layer in layers):
        raise StateError("plain RNN sweeps need RNN layers")
    return layers  # type: ignore[return-value]


def rnn_forward(
    params: RnnParams, inputs: Tensor, train: bool, feedback: bool = False
) -> Tuple[Tensor, UnrollCache]:
    """
    Plain RNN forward: h = tanh(theta_spatial x_below + theta_temporal y_prev + b).

    The temporal term is absent at the first step, and the bias whenever batch
    norm is on.

    Returns:
        (outputs [T_mb, F_N, T], cache)
    """
    layers = rnn_layers(params)

    def cell(
        nu: int, tau: int, below: Tensor, y_prev: Optional[Tensor], _: Dict
    ) -> CellCache:
        layer = layers[nu]
        a = below @ layer.theta_spatial.T
        if y_prev is not None:
            a = a + y_prev @ layer.theta_temporal.T
        if layer.bias is not None:
            a = a + layer.bias
        if (nu, tau) in params.probe:
            a = a + params.probe[(nu, tau)]
        h = np.tanh(a)
        return CellCache(x_below=below, y_prev=y_prev, a=a, h=h, y=h)

    cache = unroll(params, inputs, train, cell, feedback)
    return cache.outputs, cache


def rnn_backward(
    params: RnnParams, cache: UnrollCache, targets: Tensor
) -> RecurrentDeltas:
    """
    Backpropagation through time for the plain RNN.

    ``deltas.a`` holds the gradient on each cell's pre-activation,
    (1 - h^2) times the batch-norm-contracted output gradient.
    """
    layers = rnn_layers(params)

    def cell(
        nu: int, tau: int, dh: Tensor, deltas: RecurrentDeltas
    ) -> Tuple[Tensor, Tensor]:
        layer = layers[nu]
        h = cache.cells[(nu, tau)].h
        da = (1.0 - h * h) * dh
        deltas.a[(nu, tau)] = da
        return da @ layer.theta_spatial, da @ layer.theta_temporal

    return reverse_sweep(params, cache, targets, cell)


def rnn_grads(
    params: RnnParams, cache: UnrollCache, deltas: RecurrentDeltas
) -> Dict[str, Tensor]:
    """
    Weight and coefficient gradients from the reverse sweep.

    Spatial sums run over every step; temporal sums start at the second step.
    """
    grads = head_and_bn_grads(params, cache, deltas)
    T = cache.outputs.shape[2]
    for nu, layer in enumerate(rnn_layers(params)):
        d_spatial = np.zeros_like(layer.theta_spatial)
        d_temporal = np.zeros_like(layer.theta_temporal)
        d_bias = np.zeros(layer.width)
        for tau in range(T):
            da = deltas.a[(nu, tau)]
            cell = cache.cells[(nu, tau)]
            d_spatial += da.T @ cell.x_below
            if tau > 0:
                d_temporal += da.T @ cell.y_prev
            d_bias += da.sum(axis=0)
        grads[f"layers.{nu}.theta_spatial"] = d_spatial
        grads[f"layers.{nu}.theta_temporal"] = d_temporal
        if layer.bias is not None:
            grads[f"layers.{nu}.bias"] = d_bias
    return grads


def temporal_init(
    width: int, init: str, rng: np.random.Generator, uniform: bool = False
) -> Tensor:
    """Recurrent weight init: ``glorot``, ``diagonal`` or ``diagonal_random``."""
    if init == "glorot":
        return init_weights(width, width, rng, uniform=uniform)
    if init in ("diagonal", "diagonal_random"):
        return init_lstm_diagonal(width, width, init == "diagonal_random", rng)
    raise ConfigError(f"unknown temporal init '{init}'")


def make_bn_states(
    widths: Sequence[int], steps: int, batch_norm: bool
) -> Dict[Cell, BatchNormState]:
    if not batch_norm:
        return {}
    return {
        (nu, tau): BatchNormState.create(width, BatchNormMode.PER_FEATURE)
        for nu, width in enumerate(widths)
        for tau in range(steps)
    }


class RecurrentNet(Network):
    """Plain RNN with a per-step output head."""

    family = "rnn"

    def __init__(
        self, params: RnnParams, feedback: bool = False, dropout_seed: SeedLike = None
    ) -> None:
        super().__init__(params.loss, dropout_seed)
        self.params = params
        self.feedback = feedback
        self.cache: Optional[UnrollCache] = None
        self.deltas: Optional[RecurrentDeltas] = None
        self._validate()

    @classmethod
    def create(
        cls,
        widths: Sequence[int],
        loss: Loss,
        steps: int,
        *,
        batch_norm: bool = False,
        temporal: str = "glorot",
        seed: SeedLike = 0,
        uniform: bool = False,
    ) -> "RecurrentNet":
        """
        Build from widths [F_0, F_1, ..., F_L, F_N]: input, hidden layers, output.
        """
        if len(widths) < 3:
            raise ConfigError(
                "a recurrent network needs input, hidden and output widths"
            )
        rng = make_rng(seed)
        hidden = list(widths[1:-1])
        layers = [
            RecurrentLayer(
                theta_spatial=init_weights(fan_in, width, rng, uniform=uniform),
                theta_temporal=temporal_init(width, temporal, rng, uniform),
                bias=None if batch_norm else np.zeros(width),
            )
            for fan_in, width in zip(widths[:-2], hidden)
        ]
        head = OutputHead(
            init_weights(hidden[-1], widths[-1], rng, uniform=uniform),
            np.zeros(widths[-1]),
        )
        bn = make_bn_states(hidden, steps, batch_norm)
        params = RnnParams(layers, head, loss, steps, bn)
        return cls(params, dropout_seed=rng)

    def _validate(self) -> None:
        below = self.params.in_width
        for nu, layer in enumerate(self.params.layers):
            for name, value in layer.weights().items():
                if name.endswith("spatial") and value.shape != (layer.width, below):
                    raise DimensionError(
                        f"layer {nu}: {name} is {value.shape}, "
                        f"expected {(layer.width, below)}"
                    )
                square = (layer.width, layer.width)
                if name.endswith("temporal") and value.shape != square:
                    raise DimensionError(
                        f"layer {nu}: {name} must be square, got {value.shape}"
                    )
            below = layer.width
        if self.params.head.theta.shape[1] != below:
            raise DimensionError(
                f"output head expects width {self.params.head.theta.shape[1]}, "
                f"top is {below}"
            )

    def forward(self, inputs: Tensor, train: bool) -> Tensor:
        feedback = self.feedback and not train
        outputs, self.cache = rnn_forward(self.params, inputs, train, feedback)
        return outputs

    def backward(self, targets: Tensor) -> Dict[str, Tensor]:
        if self.cache is None:
            raise StateError("backward called before a forward pass")
        self.deltas = rnn_backward(self.params, self.cache, targets)
        return self._ordered(rnn_grads(self.params, self.cache, self.deltas))

    def parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for nu, layer in enumerate(self.params.layers):
            for name, value in layer.weights().items():
                params[f"layers.{nu}.{name}"] = value
        for (nu, tau), state in self.params.bn.items():
            params[f"layers.{nu}.bn.{tau}.gamma"] = state.gamma
            params[f"layers.{nu}.bn.{tau}.beta"] = state.beta
        params["head.theta"] = self.params.head.theta
        params["head.bias"] = self.params.head.bias
        return params

    def bn_states(self) -> Dict[str, BatchNormState]:
        return {
            f"layers.{nu}.bn.{tau}": state
            for (nu, tau), state in self.params.bn.items()
        }

    def kinked_preactivations(self) -> List[Tensor]:
        return []

    def describe(self) -> List[Dict[str, str]]:
        rows = []
        for nu, layer in enumerate(self.params.layers):
            rows.append(
                {
                    "layer": str(nu),
                    "kind": self.family,
                    "shape": f"{layer.fan_in} -> {layer.width}",
                    "detail": "bn per step" if self.params.bn else "tanh",
                }
            )
        rows.append(
            {
                "layer": "head",
                "kind": "output",
                "shape": (
                    f"{self.params.head.theta.shape[1]} -> {self.params.out_width}"
                ),
                "detail": self.params.loss.kind.value,
            }
        )
        return rows
