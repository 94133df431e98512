"""Exception hierarchy and process exit codes for indexnet."""

from enum import IntEnum


class ExitCode(IntEnum):
    """Process exit status per failure family (2 is left to click usage errors)."""

    OK = 0
    CONFIG = 3
    DATA = 4
    NUMERIC = 5
    GRADCHECK = 6


class IndexNetError(Exception):
    """Base class for every error raised by the library."""

    exit_code: ExitCode = ExitCode.CONFIG


class DimensionError(IndexNetError):
    """Tensor shapes or layer widths do not chain."""


class GeometryError(DimensionError):
    """Convolution or pooling geometry yields a non-integral output size."""


class BatchSizeError(DimensionError):
    """Batch normalization needs at least two samples per mini-batch."""


class StateError(IndexNetError):
    """A cache or accumulator is missing, stale, or read before it is written."""


class NumericError(IndexNetError):
    """Non-finite values reached a place that refuses them."""

    exit_code = ExitCode.NUMERIC


class ConfigError(IndexNetError):
    """Invalid run configuration."""


class UnsupportedConfigError(ConfigError):
    """Configuration outside the cases the backward formulas cover."""


class DataFormatError(IndexNetError):
    """Malformed dataset or checkpoint bytes."""

    exit_code = ExitCode.DATA


class CheckpointError(DataFormatError):
    """Checkpoint version, digest or payload length does not match."""


class DeterminismError(IndexNetError):
    """A loss closure returned different values for identical parameters."""

    exit_code = ExitCode.NUMERIC
