"""Tests for the tensor kernels: matmul, padding, im2col/col2im and pooling."""

import numpy as np
import pytest

from indexnet.core.errors import DimensionError, GeometryError
from indexnet.core.reference import matmul_loops, pool_scan
from indexnet.core.tensor import (
    ConvGeometry,
    col2im,
    crop2d,
    im2col,
    matmul,
    pad2d,
    pool_rows,
)


class TestMatmul:
    def test_identity(self, rng):
        m = rng.standard_normal((3, 4))
        np.testing.assert_array_equal(matmul(np.eye(3), m), m)

    def test_hand_sum(self):
        out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]]))
        np.testing.assert_array_equal(out, [[3.0], [7.0]])

    def test_matches_loop_reference(self, rng):
        a, b = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
        np.testing.assert_allclose(matmul(a, b), matmul_loops(a, b), rtol=1e-12, atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_rank_three_rejected(self):
        with pytest.raises(DimensionError):
            matmul(np.zeros((2, 2, 2)), np.zeros((2, 2)))


class TestPadding:
    def test_zero_padding_is_identity(self, rng):
        x = rng.standard_normal((2, 3, 3))
        np.testing.assert_array_equal(pad2d(x, 0), x)

    def test_single_pixel_ring(self):
        out = pad2d(np.array([[[5.0]]]), 1)
        expected = np.zeros((1, 3, 3))
        expected[0, 1, 1] = 5.0
        np.testing.assert_array_equal(out, expected)

    def test_crop_inverts_pad(self, rng):
        x = rng.standard_normal((2, 1, 4, 4))
        np.testing.assert_array_equal(crop2d(pad2d(x, 2), 2), x)

    def test_negative_padding_rejected(self):
        with pytest.raises(DimensionError):
            pad2d(np.zeros((1, 2, 2)), -1)


class TestConvGeometry:
    def test_output_extent(self):
        geom = ConvGeometry(5, 5, 3, 2, 1)
        assert (geom.out_width, geom.out_height) == (3, 3)
        assert (geom.padded_width, geom.padded_height) == (7, 7)

    def test_non_integral_geometry_rejected(self):
        with pytest.raises(GeometryError, match="non-integral"):
            ConvGeometry(4, 4, 3, 2, 0)

    def test_same_keeps_extent(self):
        geom = ConvGeometry.same(6, 6, 5)
        assert geom.padding == 2
        assert geom.out_width == 6

    def test_same_needs_odd_field(self):
        with pytest.raises(GeometryError):
            ConvGeometry.same(6, 6, 4)

    def test_towards_fc_collapses_map(self):
        geom = ConvGeometry.towards_fc(4, 4)
        assert (geom.out_width, geom.out_height) == (1, 1)


class TestIm2col:
    def test_field_covering_image_is_one_row(self, rng):
        x = rng.standard_normal((1, 3, 3))
        cols = im2col(x, ConvGeometry(3, 3, 3))
        assert cols.shape == (1, 9)
        np.testing.assert_array_equal(cols[0], x.reshape(-1))

    def test_non_overlapping_blocks(self):
        x = np.arange(16, dtype=float).reshape(1, 4, 4)
        cols = im2col(x, ConvGeometry(4, 4, 2, 2))
        assert cols.shape == (4, 4)
        np.testing.assert_array_equal(cols[0], [0, 1, 4, 5])
        np.testing.assert_array_equal(cols[1], [2, 3, 6, 7])
        np.testing.assert_array_equal(cols[2], [8, 9, 12, 13])
        np.testing.assert_array_equal(cols[3], [10, 11, 14, 15])

    def test_batched_layout(self, rng):
        x = rng.standard_normal((3, 2, 5, 5))
        geom = ConvGeometry(5, 5, 3)
        cols = im2col(x, geom)
        assert cols.shape == (3, 9, 18)
        np.testing.assert_array_equal(cols[1], im2col(x[1], geom))

    def test_wrong_spatial_shape_rejected(self):
        with pytest.raises(DimensionError):
            im2col(np.zeros((1, 4, 4)), ConvGeometry(5, 5, 3))


class TestCol2im:
    def test_non_overlapping_round_trip(self, rng):
        x = rng.standard_normal((2, 6, 6))
        geom = ConvGeometry(6, 6, 3, 3)
        np.testing.assert_array_equal(col2im(im2col(x, geom), geom), x)

    def test_overlap_accumulates(self):
        geom = ConvGeometry(3, 3, 2, 1)
        out = col2im(np.ones((4, 4)), geom)
        np.testing.assert_array_equal(
            out[0], [[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]
        )

    def test_is_adjoint_of_im2col(self, rng):
        geom = ConvGeometry(5, 5, 3, 2, 0)
        x = rng.standard_normal((2, 5, 5))
        c = rng.standard_normal((4, 18))
        lhs = np.sum(im2col(x, geom) * c)
        rhs = np.sum(x * col2im(c, geom))
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestPoolRows:
    def test_constant_input_ties_to_first(self):
        values, argmax = pool_rows(np.full((1, 4, 4), 2.0), 2, 2)
        np.testing.assert_array_equal(values, np.full((1, 2, 2), 2.0))
        assert np.all(argmax == 0)

    def test_single_window(self):
        values, argmax = pool_rows(np.array([[[1.0, 2.0], [3.0, 4.0]]]), 2, 2)
        assert values[0, 0, 0] == 4.0
        assert tuple(argmax[0, 0, 0]) == (1, 1)

    def test_matches_exhaustive_scan(self, rng):
        x = rng.standard_normal((2, 3, 6, 6))
        values, argmax = pool_rows(x, 2, 2)
        ref_values, ref_argmax = pool_scan(x, 2, 2)
        np.testing.assert_array_equal(values, ref_values)
        np.testing.assert_array_equal(argmax, ref_argmax)

    def test_window_larger_than_map(self):
        with pytest.raises(GeometryError):
            pool_rows(np.zeros((1, 2, 2)), 3, 1)
