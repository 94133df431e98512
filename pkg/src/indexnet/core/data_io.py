"""
Dataset ingestion, input centering, target encoding and mini-batch sampling.

Readers accept plain or gzip-compressed files. IDX files hold unsigned
bytes only (type 0x08); image values are scaled to [0, 1].
"""

import gzip
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from ..utils.logger import get_logger
from .errors import ConfigError, DataFormatError
from .nn_math import SeedLike, make_rng
from .tensor import IndexArray, Tensor, as_tensor

logger = get_logger(__name__)

PathLike = Union[str, Path]

IDX_UBYTE = 0x08
GZIP_MAGIC = b"\x1f\x8b"


def _read_bytes(path: PathLike) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == GZIP_MAGIC:
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError) as e:
            raise DataFormatError(f"{path}: corrupt gzip stream: {e}") from e
    return raw


def read_idx_bytes(path: PathLike) -> np.ndarray:
    """
    Parse an IDX file into an unsigned-byte array shaped like its header.

    Raises:
        DataFormatError: Bad magic, unsupported type byte, short header or a
            payload whose length disagrees with the dimensions.
    """
    data = _read_bytes(path)
    if len(data) < 4:
        raise DataFormatError(
            f"{path}: header needs 4 bytes at offset 0, found {len(data)}"
        )
    zero, dtype_byte, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0:
        raise DataFormatError(
            f"{path}: bad magic 0x{zero:04x} at offset 0 (expected 0x0000)"
        )
    if dtype_byte != IDX_UBYTE:
        raise DataFormatError(
            f"{path}: unsupported type byte 0x{dtype_byte:02x} at offset 2 (only 0x08)"
        )
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise DataFormatError(
            f"{path}: dimension table ends at offset {header_end}, "
            f"file has {len(data)} bytes"
        )
    shape = struct.unpack(f">{ndim}I", data[4:header_end]) if ndim else ()
    expected = int(np.prod(shape)) if ndim else 0
    actual = len(data) - header_end
    if actual != expected:
        raise DataFormatError(
            f"{path}: payload at offset {header_end} should hold {expected} bytes, "
            f"found {actual}"
        )
    if expected == 0:
        return np.zeros(shape if ndim else (0,), dtype=np.uint8)
    payload = np.frombuffer(data, dtype=np.uint8, offset=header_end, count=expected)
    return payload.reshape(shape)


def read_idx(path: PathLike) -> Tensor:
    """IDX image file as float64 values scaled by 1/255."""
    values = read_idx_bytes(path).astype(np.float64) / 255.0
    logger.debug("Read IDX %s with shape %s", path, values.shape)
    return values


def read_idx_labels(path: PathLike) -> IndexArray:
    """One-dimensional IDX label file, unscaled."""
    labels = read_idx_bytes(path)
    if labels.ndim != 1:
        raise DataFormatError(
            f"{path}: label files have one dimension, found {labels.ndim}"
        )
    return labels.astype(np.intp)


def write_idx(path: PathLike, values: np.ndarray) -> Path:
    """Write an unsigned-byte array as IDX; a ``.gz`` suffix compresses it."""
    arr = np.asarray(values)
    if arr.dtype != np.uint8:
        if np.any((arr < 0) | (arr > 255)) or np.any(arr != np.round(arr)):
            raise DataFormatError("IDX payloads must be integers in [0, 255]")
        arr = arr.astype(np.uint8)
    header = struct.pack(">HBB", 0, IDX_UBYTE, arr.ndim)
    header += struct.pack(f">{arr.ndim}I", *arr.shape) if arr.ndim else b""
    blob = header + np.ascontiguousarray(arr).tobytes()
    out = Path(path)
    out.write_bytes(gzip.compress(blob, mtime=0) if out.suffix == ".gz" else blob)
    return out


def read_delimited(
    path: PathLike, target_columns: int = 1, delimiter: str = ","
) -> Tuple[Tensor, Tensor]:
    """
    One sample per line; the last ``target_columns`` columns are targets.

    Blank lines and lines starting with ``#`` are ignored.

    Raises:
        DataFormatError: Ragged rows or non-numeric fields (line numbers are reported).
    """
    text = _read_bytes(path).decode("utf-8")
    rows: List[List[float]] = []
    width: Optional[int] = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split(delimiter)
        if width is None:
            width = len(fields)
            if width <= target_columns:
                raise DataFormatError(
                    f"{path}:{lineno}: {width} columns leave no inputs "
                    f"with {target_columns} target columns"
                )
        if len(fields) != width:
            raise DataFormatError(
                f"{path}:{lineno}: expected {width} columns, found {len(fields)}"
            )
        try:
            rows.append([float(v) for v in fields])
        except ValueError as e:
            raise DataFormatError(f"{path}:{lineno}: {e}") from e
    if not rows:
        raise DataFormatError(f"{path}: no samples")
    table = np.array(rows, dtype=np.float64)
    return table[:, :-target_columns], table[:, -target_columns:]


class CenteringMode(str, Enum):
    """
    Which mean is subtracted from the inputs.

    PER_FEATURE averages over samples only, PER_PIXEL does the same for image
    inputs, and PER_CHANNEL also averages over both spatial axes.
    """

    NONE = "none"
    PER_FEATURE = "per_feature"
    PER_PIXEL = "per_pixel"
    PER_CHANNEL = "per_channel"

    def axes(self, ndim: int) -> Tuple[int, ...]:
        if self is CenteringMode.PER_CHANNEL:
            if ndim != 4:
                raise ConfigError("per-channel centering needs [T, F, N, T] inputs")
            return (0, 2, 3)
        return (0,)


@dataclass
class Dataset:
    """
    Inputs with their (encoded) targets.

    Attributes:
        inputs: [T, F_0], [T, F_0, N_0, T_0] or sequences [T, F_0, steps]
        targets: Encoded targets, first axis aligned with ``inputs``
        mean: Centering statistics once applied (broadcastable against inputs)
        labels: Raw class indices, when the targets came from labels
    """

    inputs: Tensor
    targets: Tensor
    mean: Optional[Tensor] = None
    labels: Optional[IndexArray] = None

    def __post_init__(self) -> None:
        self.inputs = as_tensor(self.inputs)
        self.targets = as_tensor(self.targets)
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DataFormatError(
                f"{self.inputs.shape[0]} inputs but {self.targets.shape[0]} targets"
            )

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    def subset(self, indices: IndexArray) -> "Dataset":
        return Dataset(
            self.inputs[indices],
            self.targets[indices],
            self.mean,
            None if self.labels is None else self.labels[indices],
        )

    def limit(self, count: Optional[int]) -> "Dataset":
        if count is None or count >= len(self):
            return self
        return self.subset(np.arange(count))

    def split(self, eval_fraction: float) -> Tuple["Dataset", Optional["Dataset"]]:
        """Deterministic split: the trailing fraction becomes the evaluation set."""
        if not 0.0 <= eval_fraction < 1.0:
            raise ConfigError(f"eval fraction must be in [0, 1), got {eval_fraction}")
        n_eval = int(round(len(self) * eval_fraction))
        if n_eval == 0:
            return self, None
        cut = len(self) - n_eval
        return self.subset(np.arange(cut)), self.subset(np.arange(cut, len(self)))


def center(
    dataset: Dataset, mode: CenteringMode, regression: bool = False
) -> Tuple[Dataset, Optional[Tensor]]:
    """
    Subtract the training-set mean along the axes ``mode`` selects.

    Statistics come from ``dataset`` alone; reuse them on other splits with
    ``apply_centering``. Regression tasks are returned unchanged.

    Raises:
        DataFormatError: If the dataset is empty.
    """
    if len(dataset) == 0:
        raise DataFormatError("cannot center an empty dataset")
    if regression or mode is CenteringMode.NONE:
        if regression and mode is not CenteringMode.NONE:
            logger.info("Input centering skipped for a regression task")
        return dataset, None
    mean = dataset.inputs.mean(axis=mode.axes(dataset.inputs.ndim), keepdims=True)
    logger.debug("Centering %s with mean of shape %s", mode.value, mean.shape)
    return apply_centering(dataset, mean), mean


def apply_centering(dataset: Dataset, mean: Optional[Tensor]) -> Dataset:
    if mean is None:
        return dataset
    return Dataset(dataset.inputs - mean, dataset.targets, mean, dataset.labels)


@dataclass(frozen=True)
class OneHot:
    classes: int


@dataclass(frozen=True)
class Bins:
    """C equal-width bins over [lo, hi]; values outside clamp to the edge bins."""

    count: int
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if self.count < 2 or not self.hi > self.lo:
            raise ConfigError(f"bins need count >= 2 and hi > lo, got {self}")

    def index(self, values: Tensor) -> IndexArray:
        raw = np.floor(self.count * (as_tensor(values) - self.lo) / (self.hi - self.lo))
        return np.clip(raw, 0, self.count - 1).astype(np.intp)


TargetEncoding = Union[OneHot, Bins]


def _one_hot(indices: IndexArray, classes: int) -> Tensor:
    return np.eye(classes)[indices]


def encode_targets(raw: Any, encoding: Optional[TargetEncoding]) -> Tensor:
    """
    Encode raw targets.

    OneHot: integer class indices [T] -> [T, F_N].
    Bins: values [T] or [T, F] -> [T, F * C], feature-major, each block of C
    entries one-hot. None: values passed through as float64 (regression).

    Raises:
        DataFormatError: Class indices outside [0, classes).
    """
    if encoding is None:
        values = as_tensor(raw)
        return values.reshape(-1, 1) if values.ndim == 1 else values
    if isinstance(encoding, OneHot):
        indices = np.asarray(raw).reshape(-1)
        if indices.size and (indices.min() < 0 or indices.max() >= encoding.classes):
            raise DataFormatError(
                f"class index out of range [0, {encoding.classes}): "
                f"min {indices.min()}, max {indices.max()}"
            )
        return _one_hot(indices.astype(np.intp), encoding.classes)
    values = as_tensor(raw)
    if values.ndim == 1:
        values = values.reshape(-1, 1)
    bins = encoding.index(values)
    return _one_hot(bins, encoding.count).reshape(values.shape[0], -1)


@dataclass
class BatchSampler:
    """
    Seeded epoch-wise mini-batch index generator.

    Each epoch visits every index once. The short final batch is kept, except
    that a remainder of one sample is dropped when ``drop_singleton`` is set
    (batch norm cannot normalize a single sample).
    """

    size: int
    batch_size: int
    shuffle: bool = True
    seed: SeedLike = 0
    drop_singleton: bool = False
    rng: np.random.Generator = field(init=False)
    _pending: List[IndexArray] = field(init=False, default_factory=list)

    def __post_init__(self) -> None:
        if self.size < 1:
            raise DataFormatError("cannot sample from an empty dataset")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be positive, got {self.batch_size}")
        self.batch_size = min(self.batch_size, self.size)
        self.rng = make_rng(self.seed)

    def epoch(self) -> List[IndexArray]:
        """Index arrays of one full epoch (advances the generator when shuffling)."""
        if self.shuffle:
            order = self.rng.permutation(self.size)
        else:
            order = np.arange(self.size)
        batches = [
            order[i : i + self.batch_size] for i in range(0, self.size, self.batch_size)
        ]
        if self.drop_singleton and len(batches) > 1 and len(batches[-1]) == 1:
            batches.pop()
        return batches

    def next_indices(self) -> IndexArray:
        if not self._pending:
            self._pending = self.epoch()
        return self._pending.pop(0)

    def get_state(self) -> Dict[str, Any]:
        return dict(self.rng.bit_generator.state)

    def set_state(self, state: Dict[str, Any]) -> None:
        self.rng.bit_generator.state = state
        self._pending = []


def next_batch(sampler: BatchSampler, dataset: Dataset) -> Tuple[Tensor, Tensor]:
    """Next (inputs, targets) mini-batch, starting a new epoch when one runs out."""
    if len(dataset) != sampler.size:
        raise DataFormatError(
            f"sampler covers {sampler.size} samples, dataset has {len(dataset)}"
        )
    idx = sampler.next_indices()
    return dataset.inputs[idx], dataset.targets[idx]


def iterate_epoch(
    sampler: BatchSampler, dataset: Dataset
) -> Iterator[Tuple[Tensor, Tensor]]:
    for idx in sampler.epoch():
        yield dataset.inputs[idx], dataset.targets[idx]
