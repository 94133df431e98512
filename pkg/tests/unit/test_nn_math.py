"""Tests for activations, output functions, losses and weight initialisation."""

import math

import numpy as np
import pytest

from indexnet.core.errors import ConfigError, DimensionError, NumericError
from indexnet.core.nn_math import (
    LOG_FLOOR,
    Activation,
    ActivationKind,
    Loss,
    LossKind,
    activate,
    activate_prime,
    floor_hits,
    glorot_bound,
    init_lstm_diagonal,
    init_weights,
    loss,
    output_function,
    reset_floor_hits,
    sigmoid,
    softmax,
)

ALL_KINDS = [kind.value for kind in ActivationKind]


class TestActivations:
    def test_sigmoid_at_zero(self):
        assert activate("sigmoid", np.array([0.0]))[0] == 0.5

    def test_leaky_relu_negative(self):
        np.testing.assert_allclose(activate("leaky_relu", np.array([-3.0])), [-0.03])

    def test_relu_clamps_negatives(self):
        out = activate("relu", np.array([-2.0, 0.0, 1.5]))
        np.testing.assert_array_equal(out, [0.0, 0.0, 1.5])

    def test_parametric_relu_uses_alpha(self):
        act = Activation(ActivationKind.PARAMETRIC_RELU, alpha=0.2)
        np.testing.assert_allclose(activate(act, np.array([-1.0, 2.0])), [-0.2, 2.0])

    def test_elu_negative_branch(self):
        out = activate("elu", np.array([-1.0]))
        np.testing.assert_allclose(out, [math.exp(-1.0) - 1.0])

    def test_sigmoid_is_stable_for_large_inputs(self):
        out = sigmoid(np.array([-800.0, 800.0]))
        np.testing.assert_array_equal(out, [0.0, 1.0])

    @pytest.mark.parametrize(
        "kind, expected",
        [("sigmoid", 0.25), ("tanh", 1.0), ("relu", 1.0), ("leaky_relu", 1.0)],
    )
    def test_derivative_at_zero(self, kind, expected):
        assert activate_prime(kind, np.array([0.0]))[0] == expected

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_derivative_matches_central_difference(self, kind):
        # Away from the kink at 0 every derivative is smooth.
        a = np.array([-1.3, -0.4, 0.35, 1.7])
        eps = 1e-6
        numeric = (activate(kind, a + eps) - activate(kind, a - eps)) / (2 * eps)
        np.testing.assert_allclose(activate_prime(kind, a), numeric, rtol=1e-6)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_non_finite_input_rejected(self, kind):
        with pytest.raises(NumericError):
            activate(kind, np.array([0.0, np.nan]))
        with pytest.raises(NumericError):
            activate_prime(kind, np.array([np.inf]))

    def test_parse_accepts_mapping(self):
        act = Activation.parse({"kind": "parametric_relu", "alpha": 0.1})
        assert act.kind is ActivationKind.PARAMETRIC_RELU
        assert act.alpha == 0.1

    def test_parse_unknown_kind(self):
        with pytest.raises(ConfigError, match="swish"):
            Activation.parse("swish")

    def test_parametric_alpha_must_be_positive(self):
        with pytest.raises(ConfigError):
            Activation(ActivationKind.PARAMETRIC_RELU, alpha=0.0)

    def test_kinked_family(self):
        assert Activation.parse("relu").kinked
        assert Activation.parse("leaky_relu").kinked
        assert not Activation.parse("tanh").kinked
        assert not Activation.parse("elu").kinked


class TestSoftmax:
    def test_known_values(self):
        out = softmax(np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(
            out, [0.09003057, 0.24472847, 0.66524096], atol=1e-8
        )

    def test_shift_invariant_and_stable(self):
        a = np.array([[1000.0, 1001.0, 1002.0]])
        np.testing.assert_allclose(softmax(a), softmax(a - 1000.0))
        assert np.all(np.isfinite(softmax(a)))

    def test_rows_sum_to_one(self, rng):
        out = softmax(rng.standard_normal((5, 7)))
        np.testing.assert_allclose(out.sum(axis=1), np.ones(5))


class TestOutputFunction:
    def test_mse_is_identity(self, rng):
        a = rng.standard_normal((3, 2))
        np.testing.assert_array_equal(output_function("mse", a), a)

    def test_binned_softmax_per_feature(self, rng):
        a = rng.standard_normal((4, 6))
        out = output_function(Loss(LossKind.BINNED_CROSS_ENTROPY, bins=3), a)
        grouped = out.reshape(4, 2, 3)
        np.testing.assert_allclose(grouped.sum(axis=-1), np.ones((4, 2)))

    def test_binned_width_must_divide(self):
        with pytest.raises(DimensionError):
            output_function(Loss(LossKind.BINNED_CROSS_ENTROPY, bins=3), np.zeros((1, 4)))


class TestLoss:
    def test_mse_example(self):
        h = np.array([[1.0, 2.0]])
        y = np.array([[0.0, 2.0]])
        assert loss("mse", h, y, T_mb=1) == 0.5

    def test_cross_entropy_of_certain_prediction_is_zero(self):
        y = np.array([[0.0, 1.0]])
        assert loss("cross_entropy", y.copy(), y, T_mb=1) == 0.0

    def test_cross_entropy_averages_over_batch(self):
        h = np.array([[0.5, 0.5], [0.5, 0.5]])
        y = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert loss("cross_entropy", h, y, T_mb=2) == pytest.approx(math.log(2.0))

    def test_log_floor_counts_clamps(self):
        reset_floor_hits()
        h = np.array([[0.0, 1.0]])
        y = np.array([[1.0, 0.0]])
        value = loss("cross_entropy", h, y, T_mb=1)
        assert value == pytest.approx(-math.log(LOG_FLOOR))
        assert floor_hits() == 1
        reset_floor_hits()
        assert floor_hits() == 0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            loss("mse", np.zeros((2, 3)), np.zeros((2, 2)), T_mb=2)

    def test_binned_needs_two_bins(self):
        with pytest.raises(ConfigError):
            Loss.parse("binned_cross_entropy", bins=1)

    def test_parse_unknown_loss(self):
        with pytest.raises(ConfigError):
            Loss.parse("hinge")

    def test_classifies(self):
        assert Loss.parse("cross_entropy").classifies
        assert not Loss.parse("mse").classifies


class TestInitialisation:
    def test_default_shape_is_out_by_in(self):
        assert init_weights(3, 5, 0).shape == (5, 3)

    def test_same_seed_same_tensor(self):
        np.testing.assert_array_equal(init_weights(4, 4, 7), init_weights(4, 4, 7))

    def test_normalised_spread(self):
        theta = init_weights(100, 100, 0, shape=(1000, 100))
        scaled = theta / glorot_bound(100, 100)
        assert abs(scaled.std() - 1.0) < 0.02

    def test_uniform_within_bound(self):
        theta = init_weights(10, 20, 0, uniform=True)
        assert np.all(np.abs(theta) <= glorot_bound(10, 20))

    def test_non_positive_fan_rejected(self):
        with pytest.raises(DimensionError):
            init_weights(0, 3)

    def test_diagonal_is_half_identity(self):
        np.testing.assert_array_equal(init_lstm_diagonal(2, 2), [[0.5, 0.0], [0.0, 0.5]])

    def test_randomised_diagonal_keeps_zero_off_diagonal(self):
        theta = init_lstm_diagonal(4, 4, randomize=True, rng_seed=1)
        off = theta[~np.eye(4, dtype=bool)]
        np.testing.assert_array_equal(off, np.zeros(12))
        assert not np.allclose(np.diag(theta), 0.5)

    def test_diagonal_needs_square(self):
        with pytest.raises(DimensionError):
            init_lstm_diagonal(2, 3)
