"""
LSTM cells on the shared recurrent grid.

Gates i, f, o use the logistic function and the candidate g uses tanh, each
fed by theta_spatial x_below + theta_temporal y_prev (+ bias). The cell state
is c = f * c_prev + i * g and the output h = o * tanh(c).

Two backward modes exist. TRUNCATED propagates only through h, so the
cell-state gradient at each step comes from that step's output alone.
FULL_GRADIENT also carries f_{tau+1} * dc_{tau+1} back along the cell-state
chain and is the exact gradient. With one step, or with every forget gate at
0, the two agree bitwise.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..utils.logger import get_logger
from .errors import ConfigError, StateError
from .nn_math import Loss, SeedLike, init_weights, make_rng, sigmoid
from .rnn import (
    Cell,
    CellCache,
    OutputHead,
    RecurrentDeltas,
    RecurrentNet,
    RnnParams,
    UnrollCache,
    head_and_bn_grads,
    make_bn_states,
    reverse_sweep,
    temporal_init,
    unroll,
)
from .tensor import Tensor

logger = get_logger(__name__)

GATES = ("i", "f", "o", "g")


class LstmMode(str, Enum):
    TRUNCATED = "truncated"
    FULL_GRADIENT = "full_gradient"


@dataclass
class LstmLayer:
    """Eight gate matrices plus optional gate biases of one LSTM layer."""

    spatial: Dict[str, Tensor]
    temporal: Dict[str, Tensor]
    bias: Optional[Dict[str, Tensor]] = None

    @property
    def width(self) -> int:
        return int(self.spatial["i"].shape[0])

    @property
    def fan_in(self) -> int:
        return int(self.spatial["i"].shape[1])

    def weights(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for gate in GATES:
            params[f"theta_{gate}_spatial"] = self.spatial[gate]
            params[f"theta_{gate}_temporal"] = self.temporal[gate]
        if self.bias is not None:
            for gate in GATES:
                params[f"bias_{gate}"] = self.bias[gate]
        return params


@dataclass
class LstmCellCache(CellCache):
    """
    Cell cache with gate values and the derivative factors the backward uses.

    O = o (1 - o) tanh(c), I = i (1 - i) g, F = f (1 - f) c_prev, G = i (1 - g^2) and
    dc_dh = o (1 - tanh(c)^2).
    """

    c: Tensor
    c_prev: Tensor
    gates: Dict[str, Tensor]
    O: Tensor
    I: Tensor
    F: Tensor
    G: Tensor
    dc_dh: Tensor


def lstm_layers(params: RnnParams) -> List[LstmLayer]:
    layers = list(params.layers)
    if not all(isinstance(layer, LstmLayer) for layer in layers):
        raise StateError("LSTM sweeps need LSTM layers")
    return layers  # type: ignore[return-value]


def lstm_forward(
    params: RnnParams, inputs: Tensor, train: bool, feedback: bool = False
) -> Tuple[Tensor, UnrollCache]:
    """
    Unroll the LSTM; the state before the first step is zero.

    ``params.probe`` entries are added to h (the probe of the cell state).

    Returns:
        (outputs [T_mb, F_N, T], cache)
    """
    layers = lstm_layers(params)

    def cell(
        nu: int,
        tau: int,
        below: Tensor,
        y_prev: Optional[Tensor],
        cells: Dict[Cell, CellCache],
    ) -> CellCache:
        layer = layers[nu]
        z: Dict[str, Tensor] = {}
        for gate in GATES:
            zg = below @ layer.spatial[gate].T
            if y_prev is not None:
                zg = zg + y_prev @ layer.temporal[gate].T
            if layer.bias is not None:
                zg = zg + layer.bias[gate]
            z[gate] = zg
        i, f, o = sigmoid(z["i"]), sigmoid(z["f"]), sigmoid(z["o"])
        g = np.tanh(z["g"])
        prev = cells.get((nu, tau - 1))
        c_prev = prev.c if isinstance(prev, LstmCellCache) else np.zeros_like(g)
        c = f * c_prev + i * g
        tanh_c = np.tanh(c)
        h = o * tanh_c
        if (nu, tau) in params.probe:
            h = h + params.probe[(nu, tau)]
        return LstmCellCache(
            x_below=below,
            y_prev=y_prev,
            a=z["g"],
            h=h,
            y=h,
            c=c,
            c_prev=c_prev,
            gates={"i": i, "f": f, "o": o, "g": g},
            O=o * tanh_c * (1.0 - o),
            I=i * (1.0 - i) * g,
            F=f * (1.0 - f) * c_prev,
            G=i * (1.0 - g * g),
            dc_dh=o * (1.0 - tanh_c * tanh_c),
        )

    cache = unroll(params, inputs, train, cell, feedback)
    return cache.outputs, cache


def lstm_backward(
    params: RnnParams,
    cache: UnrollCache,
    targets: Tensor,
    mode: LstmMode,
) -> RecurrentDeltas:
    """
    Reverse sweep through the LSTM grid.

    ``deltas.a[(nu, tau)]`` maps each gate to the gradient on its
    pre-activation; ``deltas.c`` holds the cell-state gradients.
    """
    layers = lstm_layers(params)

    def cell(
        nu: int, tau: int, dh: Tensor, deltas: RecurrentDeltas
    ) -> Tuple[Tensor, Tensor]:
        layer = layers[nu]
        cc = cache.cells[(nu, tau)]
        if not isinstance(cc, LstmCellCache):
            raise StateError("LSTM backward needs an LSTM forward cache")
        dc = dh * cc.dc_dh
        nxt = (nu, tau + 1)
        if mode is LstmMode.FULL_GRADIENT and nxt in deltas.c:
            after = cache.cells[nxt]
            if not isinstance(after, LstmCellCache):
                raise StateError("LSTM backward needs an LSTM forward cache")
            dc = dc + after.gates["f"] * deltas.c[nxt]
        deltas.c[(nu, tau)] = dc
        dz = {"o": dh * cc.O, "i": dc * cc.I, "f": dc * cc.F, "g": dc * cc.G}
        deltas.a[(nu, tau)] = dz
        d_below = sum(dz[gate] @ layer.spatial[gate] for gate in GATES)
        d_prev = sum(dz[gate] @ layer.temporal[gate] for gate in GATES)
        return d_below, d_prev

    return reverse_sweep(params, cache, targets, cell)


def lstm_grads(
    params: RnnParams, cache: UnrollCache, deltas: RecurrentDeltas
) -> Dict[str, Tensor]:
    """
    Gate weight, bias, head and batch-norm gradients.

    The spatial input is the raw sequence on the first layer and the
    (batch-normalized) output of the layer below elsewhere; temporal sums
    start at the second step.
    """
    grads = head_and_bn_grads(params, cache, deltas)
    T = cache.outputs.shape[2]
    for nu, layer in enumerate(lstm_layers(params)):
        for gate in GATES:
            d_spatial = np.zeros_like(layer.spatial[gate])
            d_temporal = np.zeros_like(layer.temporal[gate])
            d_bias = np.zeros(layer.width)
            for tau in range(T):
                dz = deltas.a[(nu, tau)][gate]  # type: ignore[index]
                cc = cache.cells[(nu, tau)]
                d_spatial += dz.T @ cc.x_below
                if tau > 0:
                    d_temporal += dz.T @ cc.y_prev
                d_bias += dz.sum(axis=0)
            grads[f"layers.{nu}.theta_{gate}_spatial"] = d_spatial
            grads[f"layers.{nu}.theta_{gate}_temporal"] = d_temporal
            if layer.bias is not None:
                grads[f"layers.{nu}.bias_{gate}"] = d_bias
    return grads


class LstmNet(RecurrentNet):
    """LSTM layers with a per-step output head."""

    family = "lstm"

    def __init__(
        self,
        params: RnnParams,
        mode: LstmMode = LstmMode.FULL_GRADIENT,
        feedback: bool = False,
        dropout_seed: SeedLike = None,
    ) -> None:
        self.mode = mode
        super().__init__(params, feedback, dropout_seed)

    @classmethod
    def create(  # type: ignore[override]
        cls,
        widths: Sequence[int],
        loss: Loss,
        steps: int,
        *,
        batch_norm: bool = False,
        temporal: str = "diagonal",
        mode: LstmMode = LstmMode.FULL_GRADIENT,
        forget_bias: float = 0.0,
        seed: SeedLike = 0,
        uniform: bool = False,
    ) -> "LstmNet":
        """
        Build from widths [F_0, F_1, ..., F_L, F_N].

        Args:
            widths: Input, hidden and output widths
            loss: Loss of the output head
            steps: Sequence length (fixes the number of batch-norm states)
            batch_norm: One batch-norm state per (layer, step); drops the biases
            temporal: Recurrent weight init, one of ``glorot``, ``diagonal``
                and ``diagonal_random``
            mode: Backward mode
            forget_bias: Initial forget-gate bias (needs batch norm off)
            seed: Seed for every weight draw
            uniform: Uniform instead of normal init for the Glorot draws
        """
        if len(widths) < 3:
            raise ConfigError("an LSTM needs input, hidden and output widths")
        if batch_norm and forget_bias:
            raise ConfigError(
                "forget-gate bias needs batch norm off (no biases under batch norm)"
            )
        rng = make_rng(seed)
        hidden = list(widths[1:-1])
        layers = []
        for fan_in, width in zip(widths[:-2], hidden):
            spatial = {
                gate: init_weights(fan_in, width, rng, uniform=uniform)
                for gate in GATES
            }
            temporal_w = {
                gate: temporal_init(width, temporal, rng, uniform) for gate in GATES
            }
            bias = None
            if not batch_norm:
                bias = {gate: np.zeros(width) for gate in GATES}
                bias["f"] += forget_bias
            layers.append(LstmLayer(spatial, temporal_w, bias))
        head = OutputHead(
            init_weights(hidden[-1], widths[-1], rng, uniform=uniform),
            np.zeros(widths[-1]),
        )
        bn = make_bn_states(hidden, steps, batch_norm)
        params = RnnParams(layers, head, loss, steps, bn)
        return cls(params, mode, dropout_seed=rng)

    def forward(self, inputs: Tensor, train: bool) -> Tensor:
        outputs, self.cache = lstm_forward(
            self.params, inputs, train, self.feedback and not train
        )
        return outputs

    def backward(self, targets: Tensor) -> Dict[str, Tensor]:
        if self.cache is None:
            raise StateError("backward called before a forward pass")
        self.deltas = lstm_backward(self.params, self.cache, targets, self.mode)
        return self._ordered(lstm_grads(self.params, self.cache, self.deltas))

    def describe(self) -> List[Dict[str, str]]:
        rows = super().describe()
        suffix = " + bn per step" if self.params.bn else ""
        for row in rows[:-1]:
            row["detail"] = self.mode.value + suffix
        return rows
