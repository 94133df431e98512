"""Tests for the synthetic datasets."""

import numpy as np
import pytest

from indexnet.core.datasets import DEFAULT_TEXT, bars, char_loop, sine, synthetic, xor
from indexnet.core.errors import ConfigError


class TestSynthetic:
    def test_xor(self):
        data = xor()
        assert data.inputs.shape == (4, 2)
        np.testing.assert_array_equal(data.labels, [0, 1, 1, 0])
        np.testing.assert_array_equal(data.targets.argmax(axis=1), data.labels)

    def test_bars_shapes_and_range(self):
        data = bars(count=20, size=6, seed=1)
        assert data.inputs.shape == (20, 1, 6, 6)
        assert data.targets.shape == (20, 4)
        assert data.inputs.min() >= 0.0
        assert data.inputs.max() <= 1.0

    def test_bars_seeded(self):
        np.testing.assert_array_equal(bars(count=5, seed=3).inputs, bars(count=5, seed=3).inputs)

    def test_sine_targets_are_next_step(self):
        data = sine(count=3, steps=10, seed=2)
        assert data.inputs.shape == (3, 1, 10)
        np.testing.assert_array_equal(data.inputs[:, :, 1:], data.targets[:, :, :-1])

    def test_char_loop_alphabet(self):
        data = char_loop(count=4, steps=5)
        assert len(set(DEFAULT_TEXT)) == 8
        assert data.inputs.shape == (4, 8, 5)
        np.testing.assert_array_equal(data.inputs.sum(axis=1), np.ones((4, 5)))
        np.testing.assert_array_equal(data.inputs[:, :, 1:], data.targets[:, :, :-1])

    def test_char_loop_needs_two_characters(self):
        with pytest.raises(ConfigError):
            char_loop(text="a")

    def test_by_name(self):
        assert len(synthetic("sine", count=2, steps=3)) == 2

    def test_unknown_name(self):
        with pytest.raises(ConfigError, match="xor"):
            synthetic("spiral")
