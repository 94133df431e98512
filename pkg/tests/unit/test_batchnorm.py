"""Tests for batch normalization forwards, running statistics and the Jacobian."""

import numpy as np
import pytest

from indexnet.core.batchnorm import (
    BatchNormMode,
    BatchNormState,
    bn_coeff_grads,
    bn_forward,
    bn_forward_eval,
    bn_forward_train,
    bn_jacobian_contract,
    bn_update_running,
)
from indexnet.core.errors import BatchSizeError, DimensionError, StateError
from indexnet.core.reference import bn_contract_materialized, coeff_sums_loops


@pytest.fixture
def dense_state(rng):
    state = BatchNormState.create(3)
    state.gamma[:] = rng.uniform(0.5, 2.0, 3)
    state.beta[:] = rng.standard_normal(3)
    return state


@pytest.fixture
def map_state(rng):
    state = BatchNormState.create(2, BatchNormMode.PER_FEATURE_MAP)
    state.gamma[:] = rng.uniform(0.5, 2.0, 2)
    return state


class TestTrainForward:
    def test_output_has_beta_mean_and_gamma_spread(self, rng, dense_state):
        h = rng.standard_normal((50, 3)) * 4.0 + 3.0
        y = bn_forward_train(h, dense_state)
        np.testing.assert_allclose(y.mean(axis=0), dense_state.beta, atol=1e-10)
        np.testing.assert_allclose(y.std(axis=0), dense_state.gamma, rtol=1e-5)

    def test_constant_batch_gives_beta(self, dense_state):
        y = bn_forward_train(np.full((4, 3), 7.0), dense_state)
        np.testing.assert_allclose(y, np.tile(dense_state.beta, (4, 1)))

    def test_per_feature_map_averages_spatial_axes(self, rng, map_state):
        h = rng.standard_normal((3, 2, 4, 4)) + 5.0
        y = bn_forward_train(h, map_state)
        np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), map_state.beta, atol=1e-10)

    def test_single_sample_rejected(self, dense_state):
        with pytest.raises(BatchSizeError):
            bn_forward_train(np.ones((1, 3)), dense_state)

    def test_feature_mismatch_rejected(self, dense_state):
        with pytest.raises(DimensionError):
            bn_forward_train(np.ones((4, 2)), dense_state)


class TestRunningStatistics:
    def test_cumulative_average_update(self):
        state = BatchNormState.create(1)
        state.epoch_counter = 1
        state.running_mean = np.array([2.0])
        state.running_var = np.array([1.0])
        bn_forward_train(np.array([[3.0], [5.0]]), state)
        bn_update_running(state)
        np.testing.assert_allclose(state.running_mean, [3.0])
        assert state.epoch_counter == 2

    def test_eval_before_any_update_refused(self, dense_state):
        with pytest.raises(StateError):
            bn_forward_eval(np.ones((2, 3)), dense_state)

    def test_update_before_forward_refused(self, dense_state):
        with pytest.raises(StateError):
            bn_update_running(dense_state)

    def test_eval_uses_unbiased_variance(self):
        state = BatchNormState.create(1)
        h = np.array([[1.0], [3.0]])
        bn_forward_train(h, state)
        bn_update_running(state)
        # Biased variance 1 over D = 2 entries becomes 2 after the rescale.
        y = bn_forward_eval(np.array([[4.0]]), state)
        np.testing.assert_allclose(y, [[2.0 / np.sqrt(2.0 + state.epsilon)]])

    def test_eval_is_per_sample(self, rng, dense_state):
        bn_forward_train(rng.standard_normal((8, 3)), dense_state)
        bn_update_running(dense_state)
        batch = rng.standard_normal((5, 3))
        together = bn_forward(batch, dense_state, train=False)
        alone = np.vstack([bn_forward_eval(row[None, :], dense_state) for row in batch])
        np.testing.assert_allclose(together, alone)

    def test_statistics_exposes_checkpoint_arrays(self, dense_state):
        assert set(dense_state.statistics()) == {
            "gamma",
            "beta",
            "running_mean",
            "running_var",
        }


class TestJacobian:
    def test_contract_matches_materialized_dense(self, rng, dense_state):
        bn_forward_train(rng.standard_normal((6, 3)), dense_state)
        upstream = rng.standard_normal((6, 3))
        np.testing.assert_allclose(
            bn_jacobian_contract(dense_state, upstream),
            bn_contract_materialized(dense_state, upstream),
            rtol=1e-10,
            atol=1e-12,
        )

    def test_contract_matches_materialized_feature_maps(self, rng, map_state):
        bn_forward_train(rng.standard_normal((2, 2, 3, 3)), map_state)
        upstream = rng.standard_normal((2, 2, 3, 3))
        np.testing.assert_allclose(
            bn_jacobian_contract(map_state, upstream),
            bn_contract_materialized(map_state, upstream),
            rtol=1e-10,
            atol=1e-12,
        )

    def test_contract_is_gradient_of_forward(self, rng, dense_state):
        h = rng.standard_normal((5, 3))
        upstream = rng.standard_normal((5, 3))
        bn_forward_train(h, dense_state)
        analytic = bn_jacobian_contract(dense_state, upstream)
        eps = 1e-6
        numeric = np.zeros_like(h)
        probe = BatchNormState.create(3)
        probe.gamma[:] = dense_state.gamma
        probe.beta[:] = dense_state.beta
        for idx in np.ndindex(h.shape):
            plus, minus = h.copy(), h.copy()
            plus[idx] += eps
            minus[idx] -= eps
            diff = bn_forward_train(plus, probe) - bn_forward_train(minus, probe)
            numeric[idx] = np.sum(upstream * diff) / (2 * eps)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)

    def test_stale_cache_rejected(self, rng, dense_state):
        bn_forward_train(rng.standard_normal((4, 3)), dense_state)
        with pytest.raises(StateError, match="stale"):
            bn_jacobian_contract(dense_state, np.zeros((5, 3)))

    def test_contract_without_forward_rejected(self, dense_state):
        with pytest.raises(StateError):
            bn_jacobian_contract(dense_state, np.zeros((4, 3)))


class TestCoefficientGradients:
    def test_sums_match_loops(self, rng, map_state):
        bn_forward_train(rng.standard_normal((2, 2, 3, 3)), map_state)
        upstream = rng.standard_normal((2, 2, 3, 3))
        d_gamma, d_beta = bn_coeff_grads(map_state, upstream)
        ref_gamma, ref_beta = coeff_sums_loops(upstream, map_state.h_tilde)
        np.testing.assert_allclose(d_gamma, ref_gamma)
        np.testing.assert_allclose(d_beta, ref_beta)

    def test_mismatched_upstream_rejected(self, rng, dense_state):
        bn_forward_train(rng.standard_normal((4, 3)), dense_state)
        with pytest.raises(StateError):
            bn_coeff_grads(dense_state, np.zeros((3, 3)))
