"""Tests for LSTM cells and both backward modes."""

import numpy as np
import pytest

from indexnet.core.builder import build_model
from indexnet.core.errors import ConfigError
from indexnet.core.gradcheck import check
from indexnet.core.lstm import GATES, LstmMode, LstmNet
from indexnet.core.nn_math import Loss

CE = Loss.parse("cross_entropy")
MSE = Loss.parse("mse")


def sequence_targets(rng, n, classes, steps):
    labels = rng.integers(0, classes, (n, steps))
    return np.eye(classes)[labels].transpose(0, 2, 1)


def pair(widths, steps, **kwargs):
    """The same network built once per backward mode."""
    return (
        LstmNet.create(widths, CE, steps, mode=LstmMode.TRUNCATED, **kwargs),
        LstmNet.create(widths, CE, steps, mode=LstmMode.FULL_GRADIENT, **kwargs),
    )


class TestCell:
    def test_state_update(self, rng):
        net = LstmNet.create([2, 3, 2], CE, steps=2, seed=0)
        net.forward(rng.standard_normal((4, 2, 2)), train=True)
        first, second = net.cache.cells[(0, 0)], net.cache.cells[(0, 1)]
        np.testing.assert_array_equal(first.c_prev, np.zeros((4, 3)))
        gates = second.gates
        np.testing.assert_allclose(second.c, gates["f"] * first.c + gates["i"] * gates["g"])
        np.testing.assert_allclose(second.h, gates["o"] * np.tanh(second.c))

    def test_parameter_layout(self):
        net = LstmNet.create([2, 3, 2], CE, steps=2)
        names = list(net.parameters())
        for gate in GATES:
            assert f"layers.0.theta_{gate}_spatial" in names
            assert f"layers.0.theta_{gate}_temporal" in names
            assert f"layers.0.bias_{gate}" in names
        assert net.parameters()["layers.0.theta_f_temporal"].shape == (3, 3)
        assert len(names) == 8 + 4 + 2

    def test_forget_bias(self):
        net = LstmNet.create([2, 3, 2], CE, steps=2, forget_bias=1.0)
        np.testing.assert_array_equal(net.parameters()["layers.0.bias_f"], np.ones(3))
        np.testing.assert_array_equal(net.parameters()["layers.0.bias_i"], np.zeros(3))

    def test_forget_bias_needs_biases(self):
        with pytest.raises(ConfigError):
            LstmNet.create([2, 3, 2], CE, steps=2, batch_norm=True, forget_bias=1.0)

    def test_default_temporal_init_is_half_identity(self):
        net = LstmNet.create([2, 3, 2], CE, steps=2)
        np.testing.assert_array_equal(net.parameters()["layers.0.theta_g_temporal"], 0.5 * np.eye(3))

    def test_describe_names_mode(self):
        rows = LstmNet.create([2, 3, 2], CE, steps=2, batch_norm=True).describe()
        assert rows[0]["kind"] == "lstm"
        assert rows[0]["detail"] == "full_gradient + bn per step"


class TestBackwardModes:
    def test_modes_agree_on_one_step(self, rng):
        truncated, full = pair([2, 3, 2], 1, seed=1)
        x = rng.standard_normal((3, 2, 1))
        y = sequence_targets(rng, 3, 2, 1)
        _, g_truncated = truncated.gradients(x, y)
        _, g_full = full.gradients(x, y)
        for name in g_full:
            np.testing.assert_array_equal(g_truncated[name], g_full[name])

    def test_modes_agree_with_closed_forget_gates(self, rng):
        truncated, full = pair([2, 3, 2], 3, seed=2)
        for net in (truncated, full):
            params = net.parameters()
            params["layers.0.theta_f_spatial"][:] = 0.0
            params["layers.0.theta_f_temporal"][:] = 0.0
            params["layers.0.bias_f"][:] = -1000.0
        x = rng.standard_normal((2, 2, 3))
        y = sequence_targets(rng, 2, 2, 3)
        _, g_truncated = truncated.gradients(x, y)
        _, g_full = full.gradients(x, y)
        for name in g_full:
            np.testing.assert_array_equal(g_truncated[name], g_full[name])

    def test_full_gradient_passes_check(self, rng, gradients_match):
        net = LstmNet.create([2, 3, 2], CE, steps=3, forget_bias=1.0, seed=3)
        x = rng.standard_normal((2, 2, 3))
        gradients_match(check(net, x, sequence_targets(rng, 2, 2, 3)))

    def test_truncated_deviates_over_several_steps(self, rng):
        net = LstmNet.create(
            [2, 3, 2], CE, steps=3, forget_bias=1.0, mode=LstmMode.TRUNCATED, seed=3
        )
        x = rng.standard_normal((2, 2, 3))
        report = check(net, x, sequence_targets(rng, 2, 2, 3))
        assert not report.passed
        assert report.max_error > 1e-3


class TestModeSelection:
    LSTM = {"kind": "lstm", "widths": [2, 3, 2], "steps": 2}

    def test_full_gradient_by_default(self, make_config):
        model = build_model(make_config(network=self.LSTM))
        assert model.mode is LstmMode.FULL_GRADIENT

    def test_truncated_from_config(self, make_config):
        model = build_model(make_config(network={**self.LSTM, "mode": "truncated"}))
        assert model.mode is LstmMode.TRUNCATED

    def test_unknown_mode_lists_choices(self, make_config):
        with pytest.raises(ConfigError, match="truncated, full_gradient"):
            build_model(make_config(network={**self.LSTM, "mode": "h_only"}))


class TestGradients:
    def test_stacked_layers(self, rng, gradients_match):
        net = LstmNet.create([2, 3, 3, 2], CE, steps=3, seed=4)
        x = rng.standard_normal((2, 2, 3))
        gradients_match(check(net, x, sequence_targets(rng, 2, 2, 3)))

    def test_batch_norm_per_step(self, rng, gradients_match):
        net = LstmNet.create([2, 3, 2], CE, steps=3, batch_norm=True, seed=5)
        x = rng.standard_normal((3, 2, 3))
        gradients_match(check(net, x, sequence_targets(rng, 3, 2, 3)))

    def test_regression_with_glorot_temporal(self, rng, gradients_match):
        net = LstmNet.create([1, 4, 1], MSE, steps=4, temporal="glorot", seed=6)
        x = rng.standard_normal((2, 1, 4))
        gradients_match(check(net, x, rng.standard_normal((2, 1, 4))))


class TestGeneration:
    def test_feedback_ignores_later_inputs(self, rng):
        net = LstmNet.create([3, 4, 3], CE, steps=4, seed=7)
        net.feedback = True
        x = rng.standard_normal((2, 3, 4))
        other = x.copy()
        other[:, :, 1:] = 0.0
        np.testing.assert_array_equal(net.predict(x), net.predict(other))
