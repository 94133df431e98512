"""
Dense float64 tensor substrate.

Tensors are plain C-contiguous numpy arrays of float64; the helpers here add
the checks the layer modules rely on plus the two layout transforms that turn
convolution and pooling loops into matrix work:

- im2col / col2im: patch extraction and its scatter-add adjoint, so a
  convolution becomes one matrix product and its input gradient one product
  followed by col2im.
- pool_rows: pooling windows flattened into rows, reduced with a row maximum.

Spatial axes follow the (feature, width N, height T) convention, with the
output position (l, m) flattened as row ``l * T_p + m`` and a patch entry
(f', j, k) as column ``f' * R * R + j * R + k``.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionError, GeometryError

Tensor = NDArray[np.float64]
IndexArray = NDArray[np.intp]


def as_tensor(data: ArrayLike) -> Tensor:
    """Return ``data`` as a C-contiguous float64 array (copying only if needed)."""
    return np.ascontiguousarray(data, dtype=np.float64)


@dataclass(frozen=True)
class ConvGeometry:
    """
    Geometry of a square convolution or pooling window over an N x T map.

    Attributes:
        in_width: Input extent N along the first spatial axis
        in_height: Input extent T along the second spatial axis
        receptive_field: Window size R
        stride: Window step S
        padding: Zero ring P added on every side before windowing

    Raises:
        GeometryError: If (N + 2P - R) / S + 1 (or the T counterpart) is not a
            positive integer.
    """

    in_width: int
    in_height: int
    receptive_field: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self) -> None:
        if self.receptive_field < 1 or self.stride < 1 or self.padding < 0:
            raise GeometryError(
                f"invalid window: R={self.receptive_field}, S={self.stride}, "
                f"P={self.padding}"
            )
        for label, extent in (("width", self.in_width), ("height", self.in_height)):
            span = extent + 2 * self.padding - self.receptive_field
            if extent < 1 or span < 0 or span % self.stride != 0:
                raise GeometryError(
                    f"non-integral output {label}: ({extent} + 2*{self.padding} - "
                    f"{self.receptive_field}) / {self.stride} + 1"
                )

    @classmethod
    def same(
        cls, in_width: int, in_height: int, receptive_field: int
    ) -> "ConvGeometry":
        """Stride 1 geometry whose output keeps the input extents (R odd)."""
        if receptive_field % 2 == 0:
            raise GeometryError(
                "'same' convolution needs an odd receptive field, "
                f"got {receptive_field}"
            )
        return cls(in_width, in_height, receptive_field, 1, (receptive_field - 1) // 2)

    @classmethod
    def towards_fc(cls, in_width: int, in_height: int) -> "ConvGeometry":
        """Window covering the whole (square) map, collapsing it to 1 x 1."""
        if in_width != in_height:
            raise GeometryError(
                f"fully-covering window needs a square map, got {in_width}x{in_height}"
            )
        return cls(in_width, in_height, in_width, 1, 0)

    @property
    def out_width(self) -> int:
        span = self.in_width + 2 * self.padding - self.receptive_field
        return span // self.stride + 1

    @property
    def out_height(self) -> int:
        return (
            self.in_height + 2 * self.padding - self.receptive_field
        ) // self.stride + 1

    @property
    def padded_width(self) -> int:
        return self.in_width + 2 * self.padding

    @property
    def padded_height(self) -> int:
        return self.in_height + 2 * self.padding


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Rank-2 matrix product in float64.

    Raises:
        DimensionError: If either operand is not rank 2 or inner extents differ.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return np.matmul(a, b)


def pad2d(x: Tensor, p: int) -> Tensor:
    """Surround the last two axes of ``x`` with a ring of ``p`` zeros."""
    if p < 0:
        raise DimensionError(f"padding must be non-negative, got {p}")
    if p == 0:
        return as_tensor(x).copy()
    widths = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    return np.pad(as_tensor(x), widths)


def crop2d(x: Tensor, p: int) -> Tensor:
    """Inverse of pad2d: drop a ring of ``p`` entries from the last two axes."""
    if p == 0:
        return x
    return x[..., p:-p, p:-p]


def _check_padded_input(x: Tensor, geom: ConvGeometry) -> None:
    if x.ndim not in (3, 4):
        raise DimensionError(f"expected [F,H,W] or [T_mb,F,H,W], got {x.shape}")
    if x.shape[-2:] != (geom.padded_width, geom.padded_height):
        raise DimensionError(
            f"input spatial shape {x.shape[-2:]} does not match padded geometry "
            f"{(geom.padded_width, geom.padded_height)}"
        )


def im2col(x: Tensor, geom: ConvGeometry) -> Tensor:
    """
    Flatten every receptive field of an already padded input into a row.

    Args:
        x: Padded input [F, H, W], or a batch [T_mb, F, H, W]
        geom: Geometry whose padded extents equal (H, W)

    Returns:
        [N_p * T_p, F * R * R] (batched: [T_mb, N_p * T_p, F * R * R]) where row
        ``l * T_p + m`` holds x[f', S*l + j, S*m + k] at column f'*R*R + j*R + k.
    """
    _check_padded_input(x, geom)
    R, S = geom.receptive_field, geom.stride
    windows = sliding_window_view(x, (R, R), axis=(-2, -1))[..., ::S, ::S, :, :]
    # [..., F, N_p, T_p, R, R] -> [..., N_p, T_p, F, R, R]
    moved = np.moveaxis(windows, -5, -3)
    lead = x.shape[:-3]
    features = x.shape[-3]
    return np.ascontiguousarray(moved).reshape(
        *lead, geom.out_width * geom.out_height, features * R * R
    )


def col2im(cols: Tensor, geom: ConvGeometry) -> Tensor:
    """
    Scatter-add adjoint of im2col.

    Every column entry is added back to the padded input position it was read
    from, so overlapping windows accumulate.

    Returns:
        [F, H, W] (batched: [T_mb, F, H, W]) in padded coordinates.
    """
    R, S = geom.receptive_field, geom.stride
    N_p, T_p = geom.out_width, geom.out_height
    rows, width = cols.shape[-2:] if cols.ndim in (2, 3) else (0, 0)
    if cols.ndim not in (2, 3) or rows != N_p * T_p or width % (R * R):
        raise DimensionError(
            f"columns of shape {cols.shape} do not match geometry "
            f"({N_p * T_p} rows, multiple of {R * R} columns)"
        )
    features = cols.shape[-1] // (R * R)
    lead = cols.shape[:-2]
    blocks = np.moveaxis(cols.reshape(*lead, N_p, T_p, features, R, R), -3, -5)
    out = np.zeros((*lead, features, geom.padded_width, geom.padded_height))
    for j in range(R):
        for k in range(R):
            out[..., j : j + S * (N_p - 1) + 1 : S, k : k + S * (T_p - 1) + 1 : S] += (
                blocks[..., j, k]
            )
    return out


def pool_rows(x: Tensor, R_P: int, S_P: int) -> Tuple[Tensor, IndexArray]:
    """
    Max pooling as a maximum over the rows of the flattened windows.

    Args:
        x: [..., F, H, W] input, no padding
        R_P: Pooling window size
        S_P: Pooling stride

    Returns:
        (values, argmax): values [..., F, N_p, T_p]; argmax [..., F, N_p, T_p, 2]
        holding the winning (j, k) inside each window. Ties resolve to the
        smallest row-major (j, k).

    Raises:
        GeometryError: If the window leaves the map or strides unevenly.
    """
    if x.ndim < 3:
        raise DimensionError(f"expected at least [F,H,W], got {x.shape}")
    n_extent, t_extent = x.shape[-2:]
    if R_P > n_extent or R_P > t_extent:
        raise GeometryError(f"pool window {R_P} exceeds map {n_extent}x{t_extent}")
    ConvGeometry(n_extent, t_extent, R_P, S_P, 0)
    windows = sliding_window_view(x, (R_P, R_P), axis=(-2, -1))[..., ::S_P, ::S_P, :, :]
    flat = windows.reshape(*windows.shape[:-2], R_P * R_P)
    winner = np.argmax(flat, axis=-1)
    values = np.take_along_axis(flat, winner[..., None], axis=-1)[..., 0]
    rows, cols = np.divmod(winner, R_P)
    return np.ascontiguousarray(values), np.stack((rows, cols), axis=-1)
