"""
Turn a run configuration into a network and its datasets.

``plan_network`` checks the network section with shape arithmetic only, so a
bad configuration fails before any weight is drawn.
"""

from pathlib import Path
from enum import Enum
from typing import Any, List, Mapping, Optional, Tuple, Type, TypeVar

from ..utils.config import RunConfig
from ..utils.logger import get_logger
from .cnn import ConvNet, ConvPath
from .data_io import (
    Bins,
    CenteringMode,
    Dataset,
    OneHot,
    TargetEncoding,
    apply_centering,
    center,
    encode_targets,
    read_delimited,
    read_idx,
    read_idx_labels,
)
from .datasets import synthetic
from .errors import ConfigError, DataFormatError, UnsupportedConfigError
from .fnn import FeedForwardNet, SkipConnection, SkipFormulation
from .lstm import LstmMode, LstmNet
from .model import Network
from .rnn import RecurrentNet
from .tensor import ConvGeometry

logger = get_logger(__name__)

E = TypeVar("E", bound=Enum)


def _option(kind: Type[E], value: Any, key: str) -> E:
    try:
        return kind(value)
    except ValueError as e:
        choices = ", ".join(str(member.value) for member in kind)
        raise ConfigError(f"{key} must be one of {choices}, got {value!r}") from e


def _widths(net: Mapping[str, Any], minimum: int) -> List[int]:
    widths = [int(w) for w in net.get("widths") or []]
    if len(widths) < minimum or any(w < 1 for w in widths):
        raise ConfigError(f"network.widths needs at least {minimum} positive entries")
    return widths


def _plan_cnn(net: Mapping[str, Any]) -> List[Tuple[int, int, int]]:
    shape = net.get("input_shape")
    if not shape or len(shape) != 3:
        raise ConfigError("network.input_shape must be [F, N, T] for a CNN")
    F, N, T = (int(v) for v in shape)
    shapes = []
    flat: Optional[int] = None
    below = None
    towards = 0
    for i, spec in enumerate(net.get("layers") or []):
        kind = spec.get("kind")
        if flat is None and kind in ("dense", "output"):
            raise ConfigError(f"layer {i}: dense layers need a towards_fc layer below")
        if flat is not None and kind not in ("dense", "output"):
            raise ConfigError(f"layer {i}: only dense layers may follow towards_fc")
        if kind == "conv":
            R = int(spec["receptive_field"])
            if spec.get("same"):
                geom = ConvGeometry.same(N, T, R)
            else:
                stride = int(spec.get("stride", 1))
                geom = ConvGeometry(N, T, R, stride, int(spec.get("padding", 0)))
            if below == "pool" and geom.stride != 1:
                raise UnsupportedConfigError(
                    f"layer {i}: convolution above a pool needs stride 1"
                )
            F, N, T = int(spec["features"]), geom.out_width, geom.out_height
        elif kind == "pool":
            if below == "pool":
                raise ConfigError(f"layer {i}: pool directly above pool")
            R = int(spec["receptive_field"])
            geom = ConvGeometry(N, T, R, int(spec.get("stride", R)), 0)
            N, T = geom.out_width, geom.out_height
        elif kind == "towards_fc":
            towards += 1
            F, N, T = int(spec["features"]), 1, 1
            flat = F
        elif kind in ("dense", "output"):
            flat = int(spec["features"])
            F, N, T = flat, 1, 1
        else:
            raise ConfigError(f"layer {i}: unknown CNN layer kind '{kind}'")
        shapes.append((F, N, T))
        below = kind
    if towards != 1:
        raise ConfigError(f"a CNN needs exactly one towards_fc layer, found {towards}")
    if below != "output":
        raise ConfigError("the last CNN layer must be the output layer")
    return shapes


def plan_network(config: RunConfig) -> List[Tuple[int, ...]]:
    """
    Output shape of every layer, computed without allocating weights.

    Raises:
        ConfigError: On inconsistent layer descriptions, batch norm with
            mini-batches below two samples, or feedback with F_N != F_0.
        GeometryError: On non-integral convolution or pooling sizes.
    """
    net = config.network
    kind = net["kind"]
    if config.uses_batch_norm() and config.training.batch_size < 2:
        raise ConfigError("batch norm needs training.batch_size >= 2")
    try:
        if kind == "fnn":
            return [(w,) for w in _widths(net, 2)[1:]]
        if kind == "cnn":
            return list(_plan_cnn(net))
        widths = _widths(net, 3)
        if int(net.get("steps", 0)) < 1:
            raise ConfigError("network.steps must be positive for recurrent networks")
        if net.get("feedback") and widths[0] != widths[-1]:
            raise ConfigError("feedback generation needs output width == input width")
        return [(w,) for w in widths[1:]]
    except KeyError as e:
        raise ConfigError(f"network: missing key {e}") from e


def build_model(config: RunConfig) -> Network:
    """Validate the network section and build the network it describes."""
    plan_network(config)
    net = config.network
    kind = net["kind"]
    uniform = net.get("init", "normal") == "uniform"
    seed = config.seed
    model: Network
    if kind == "fnn":
        skips = [
            SkipConnection(
                int(s["source"]),
                _option(
                    SkipFormulation,
                    s.get("formulation", "non_standard"),
                    "network.skips.formulation",
                ),
            )
            for s in net.get("skips") or []
        ]
        model = FeedForwardNet.create(
            _widths(net, 2),
            net.get("activation", "relu"),
            config.loss,
            batch_norm=bool(net.get("batch_norm", False)),
            dropout=[float(p) for p in net.get("dropout") or []],
            skips=skips,
            seed=seed,
            uniform=uniform,
        )
    elif kind == "cnn":
        model = ConvNet.create(
            net["input_shape"],
            net["layers"],
            config.loss,
            skips=[int(s) for s in net.get("skips") or []],
            seed=seed,
            path=_option(ConvPath, net.get("path", "gemm"), "network.path"),
            uniform=uniform,
        )
    elif kind == "rnn":
        model = RecurrentNet.create(
            _widths(net, 3),
            config.loss,
            int(net["steps"]),
            batch_norm=bool(net.get("batch_norm", False)),
            temporal=net.get("temporal", "glorot"),
            seed=seed,
            uniform=uniform,
        )
        model.feedback = bool(net.get("feedback", False))
    else:
        model = LstmNet.create(
            _widths(net, 3),
            config.loss,
            int(net["steps"]),
            batch_norm=bool(net.get("batch_norm", False)),
            temporal=net.get("temporal", "diagonal"),
            mode=_option(LstmMode, net.get("mode", "full_gradient"), "network.mode"),
            forget_bias=float(net.get("forget_bias", 0.0)),
            seed=seed,
            uniform=uniform,
        )
        model.feedback = bool(net.get("feedback", False))
    logger.info(
        "Built %s network with %d parameters", model.family, model.parameter_count()
    )
    return model


def target_encoding(raw: Optional[Mapping[str, Any]]) -> Optional[TargetEncoding]:
    if not raw:
        return None
    kind = raw.get("kind")
    try:
        if kind == "one_hot":
            return OneHot(int(raw["classes"]))
        if kind == "bins":
            return Bins(int(raw["count"]), float(raw["lo"]), float(raw["hi"]))
    except KeyError as e:
        raise ConfigError(f"data.encoding: missing key {e}") from e
    raise ConfigError(f"data.encoding: unknown kind '{kind}'")


def _resolve(path: str, base: Optional[Path]) -> Path:
    candidate = Path(path)
    if not candidate.is_absolute() and base is not None and not candidate.exists():
        candidate = base / candidate
    if not candidate.exists():
        raise DataFormatError(f"data file not found: {path}")
    return candidate


def _shape_for(model_kind: str, inputs: Any, network: Mapping[str, Any]) -> Any:
    if model_kind == "fnn" and inputs.ndim > 2:
        return inputs.reshape(inputs.shape[0], -1)
    if model_kind == "cnn" and inputs.ndim == 3:
        return inputs.reshape(inputs.shape[0], 1, *inputs.shape[1:])
    if model_kind == "cnn" and inputs.ndim == 2:
        return inputs.reshape(inputs.shape[0], *network["input_shape"])
    return inputs


def load_raw_dataset(config: RunConfig, path: Optional[str] = None) -> Dataset:
    """
    Dataset named by the data section, before splitting and centering.

    ``path`` replaces the configured file (delimited text, or an IDX image
    file whose labels sit next to it as configured).
    """
    data = config.data
    base = config.source.parent if config.source else None
    encoding = target_encoding(data.encoding)
    if data.source == "synthetic" and path is None:
        params = dict(data.params)
        if data.name not in ("xor",):
            params.setdefault("seed", config.seed)
        dataset = synthetic(str(data.name), **params)
    elif data.source == "idx" or (
        path is not None and not str(path).endswith((".csv", ".txt"))
    ):
        images = read_idx(_resolve(path or str(data.images), base))
        if data.labels is None:
            raise ConfigError("data.labels is required for IDX datasets")
        labels = read_idx_labels(_resolve(str(data.labels), base))
        if len(labels) != len(images):
            raise DataFormatError(f"{len(images)} images but {len(labels)} labels")
        enc = encoding or OneHot(int(labels.max()) + 1)
        dataset = Dataset(images, encode_targets(labels, enc), labels=labels)
    else:
        inputs, raw_targets = read_delimited(
            _resolve(path or str(data.path), base), data.target_columns
        )
        labels = None
        if isinstance(encoding, OneHot):
            labels = raw_targets.reshape(-1).astype(int)
        raw = labels if labels is not None else raw_targets
        dataset = Dataset(inputs, encode_targets(raw, encoding), labels=labels)
    dataset.inputs = _shape_for(config.network["kind"], dataset.inputs, config.network)
    return dataset.limit(data.limit)


def load_datasets(
    config: RunConfig, path: Optional[str] = None
) -> Tuple[Dataset, Optional[Dataset]]:
    """
    Training and evaluation splits, centered with training statistics only.
    """
    dataset = load_raw_dataset(config, path)
    train, held_out = dataset.split(config.data.eval_fraction)
    mode = _option(CenteringMode, config.data.centering, "data.centering")
    train, mean = center(train, mode, config.data.regression)
    if held_out is not None:
        held_out = apply_centering(held_out, mean)
    logger.info(
        "Loaded %d training and %d evaluation samples",
        len(train), 0 if held_out is None else len(held_out),
    )
    return train, held_out

