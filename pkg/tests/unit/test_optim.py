"""Tests for update rules, decay, clipping and penalties."""

import math

import numpy as np
import pytest

from indexnet.core.errors import ConfigError, NumericError, UnsupportedConfigError
from indexnet.core.optim import (
    OptimizerConfig,
    OptimizerKind,
    OptimizerState,
    RegularizerConfig,
    clip_weights,
    lr_decay,
    penalty_grad,
    penalty_value,
    step,
)


def identity_grads(params):
    """Gradient of 1/2 |theta|^2."""
    return {name: value.copy() for name, value in params.items()}


class TestUpdateRules:
    def test_sgd(self):
        params = {"w": np.array([1.0, -2.0])}
        state = OptimizerState(OptimizerConfig(OptimizerKind.SGD, lr=0.1))
        step(state, params, {"w": np.array([1.0, 1.0])})
        np.testing.assert_allclose(params["w"], [0.9, -2.1])
        assert state.step_count == 1

    def test_momentum_without_memory_is_sgd(self, rng):
        sgd = {"w": np.ones(3)}
        momentum = {"w": np.ones(3)}
        s_sgd = OptimizerState(OptimizerConfig(OptimizerKind.SGD, lr=0.05))
        s_mom = OptimizerState(OptimizerConfig(OptimizerKind.MOMENTUM, lr=0.05, gamma=0.0))
        for _ in range(4):
            g = {"w": rng.standard_normal(3)}
            step(s_sgd, sgd, g)
            step(s_mom, momentum, g)
        np.testing.assert_array_equal(sgd["w"], momentum["w"])

    def test_adagrad_accumulates_squares(self):
        params = {"w": np.array([1.0, 1.0])}
        state = OptimizerState(OptimizerConfig(OptimizerKind.ADAGRAD, lr=0.01))
        g = {"w": np.array([0.5, -2.0])}
        for _ in range(3):
            step(state, params, g)
        np.testing.assert_allclose(state.v["w"], 3 * g["w"] ** 2)

    def test_adam_first_step_moves_by_learning_rate(self):
        params = {"w": np.array([1.0, -1.0])}
        state = OptimizerState(OptimizerConfig(OptimizerKind.ADAM, lr=0.01))
        step(state, params, {"w": np.array([0.5, -3.0])})
        np.testing.assert_allclose(params["w"], [0.99, -0.99], rtol=1e-6)

    @pytest.mark.parametrize("kind", list(OptimizerKind))
    def test_quadratic_loss_decreases(self, kind):
        params = {"w": np.array([1.0, -0.5])}
        state = OptimizerState(OptimizerConfig(kind, lr=0.01))
        losses = []
        for _ in range(10):
            losses.append(0.5 * float(np.sum(params["w"] ** 2)))
            step(state, params, identity_grads(params), grad_at=identity_grads)
        losses.append(0.5 * float(np.sum(params["w"] ** 2)))
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_updates_happen_in_place(self):
        w = np.ones(2)
        params = {"w": w}
        step(OptimizerState(OptimizerConfig(OptimizerKind.SGD)), params, {"w": np.ones(2)})
        assert params["w"] is w
        np.testing.assert_allclose(w, [0.999, 0.999])

    def test_adam_first_moment_is_gradient_after_one_step(self, rng):
        g = {"w": rng.standard_normal(1000) * 10.0 ** rng.integers(-4, 4, size=1000)}
        state = OptimizerState(OptimizerConfig(OptimizerKind.ADAM))
        step(state, {"w": np.zeros(1000)}, g)
        np.testing.assert_array_equal(state.m["w"], g["w"])
        np.testing.assert_array_equal(state.v["w"], g["w"] * g["w"])

    @pytest.mark.parametrize("kind", list(OptimizerKind))
    def test_default_hyperparameters_descend_for_100_steps(self, kind):
        params = {"w": np.ones(3)}
        state = OptimizerState(OptimizerConfig(kind))
        losses = [0.5 * float(np.sum(params["w"] ** 2))]
        for _ in range(100):
            step(state, params, identity_grads(params), grad_at=identity_grads)
            losses.append(0.5 * float(np.sum(params["w"] ** 2)))
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_adagrad_accumulator_never_shrinks(self, rng):
        params = {"w": np.zeros(5)}
        state = OptimizerState(OptimizerConfig(OptimizerKind.ADAGRAD))
        previous = np.zeros(5)
        for _ in range(50):
            step(state, params, {"w": rng.standard_normal(5)})
            assert np.all(state.v["w"] >= previous)
            previous = state.v["w"].copy()

    @pytest.mark.parametrize("kind", list(OptimizerKind))
    def test_gradient_entry_only_moves_its_parameter(self, rng, kind):
        start = {"w": rng.standard_normal(6), "b": rng.standard_normal(2)}
        bump = np.zeros(6)
        bump[4] = 0.75

        def shifted(offset):
            def grads(params):
                return {"w": params["w"] + offset, "b": params["b"].copy()}

            return grads

        runs = []
        for offset in (np.zeros(6), bump):
            params = {name: value.copy() for name, value in start.items()}
            state = OptimizerState(OptimizerConfig(kind, lr=0.05))
            for e in range(4):
                fn = shifted(offset if e == 2 else np.zeros(6))
                step(state, params, fn(params), grad_at=fn)
            runs.append(params)
        plain, bumped = runs
        moved = np.flatnonzero(plain["w"] != bumped["w"])
        np.testing.assert_array_equal(moved, [4])
        np.testing.assert_array_equal(plain["b"], bumped["b"])


class TestRefusals:
    def test_nesterov_needs_callback(self):
        state = OptimizerState(OptimizerConfig(OptimizerKind.NESTEROV))
        with pytest.raises(UnsupportedConfigError):
            step(state, {"w": np.ones(1)}, {"w": np.ones(1)})

    def test_non_finite_gradient_refused(self):
        params = {"a": np.ones(2), "b": np.ones(2)}
        state = OptimizerState(OptimizerConfig(OptimizerKind.SGD))
        with pytest.raises(NumericError, match="b"):
            step(state, params, {"a": np.ones(2), "b": np.array([1.0, np.nan])})
        np.testing.assert_array_equal(params["a"], np.ones(2))
        assert state.step_count == 0

    def test_missing_gradient(self):
        state = OptimizerState(OptimizerConfig())
        with pytest.raises(ConfigError, match="w"):
            step(state, {"w": np.ones(1)}, {})


class TestConfig:
    def test_default_learning_rates(self):
        assert OptimizerConfig(OptimizerKind.SGD).learning_rate == 1e-3
        assert OptimizerConfig(OptimizerKind.ADAGRAD).learning_rate == 1e-2
        assert OptimizerConfig(OptimizerKind.ADADELTA).learning_rate == 1.0
        assert OptimizerConfig(OptimizerKind.ADAM, lr=0.5).learning_rate == 0.5

    @pytest.mark.parametrize(
        "kwargs", [{"lr": 0.0}, {"lr": -1.0}, {"gamma": 1.0}, {"beta2": -0.1}, {"epsilon": 0.0}]
    )
    def test_invalid_hyperparameters(self, kwargs):
        with pytest.raises(ConfigError):
            OptimizerConfig(**kwargs)

    def test_state_arrays_reload(self):
        state = OptimizerState(OptimizerConfig(OptimizerKind.ADAM, lr=0.01))
        step(state, {"w": np.ones(2)}, {"w": np.array([0.1, 0.2])})
        arrays = state.arrays()
        assert set(arrays) == {"v.w", "m.w"}
        fresh = OptimizerState(state.config)
        fresh.load_arrays(arrays)
        np.testing.assert_array_equal(fresh.v["w"], state.v["w"])
        np.testing.assert_array_equal(fresh.m["w"], state.m["w"])


class TestDecay:
    def test_log_two_halves(self):
        assert lr_decay(0.4, math.log(2.0)) == pytest.approx(0.2)

    def test_zero_decay_keeps_rate(self):
        assert lr_decay(0.01, 0.0) == 0.01

    def test_rate_must_be_positive(self):
        with pytest.raises(ConfigError):
            lr_decay(0.0, 0.1)


class TestRegularization:
    def test_clip_rescales_to_ceiling(self):
        np.testing.assert_allclose(clip_weights(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])

    def test_clip_leaves_small_weights(self):
        theta = np.array([0.3, 0.4])
        assert clip_weights(theta, 1.0) is theta

    def test_clip_threshold_positive(self):
        with pytest.raises(ConfigError):
            clip_weights(np.ones(2), 0.0)

    def test_l2_gradient(self):
        grad = penalty_grad(RegularizerConfig(l2=0.1), np.array([1.0, -2.0]))
        np.testing.assert_allclose(grad, [0.2, -0.4])

    def test_l1_gradient(self):
        grad = penalty_grad(RegularizerConfig(l1=0.5), np.array([3.0, 0.0, -1.0]))
        np.testing.assert_array_equal(grad, [0.5, 0.0, -0.5])

    def test_penalty_value(self):
        value = penalty_value(RegularizerConfig(l2=0.1, l1=0.5), np.array([1.0, -2.0]))
        assert value == pytest.approx(0.1 * 5.0 + 0.5 * 3.0)

    def test_negative_penalty_rejected(self):
        with pytest.raises(ConfigError):
            RegularizerConfig(l2=-1.0)
