"""Shared pytest fixtures for the indexnet test suite."""

from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np
import pytest
import yaml

from indexnet.core.gradcheck import GradCheckReport
from indexnet.utils.config import RunConfig

# Numeric noise of a central difference with step 1e-5 on an O(1) loss.
ABS_FLOOR = 1e-9


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


def tiny_config_dict(**overrides: Any) -> Dict[str, Any]:
    """A small feedforward run that trains in well under a second."""
    raw: Dict[str, Any] = {
        "name": "tiny",
        "seed": 0,
        "network": {"kind": "fnn", "widths": [2, 4, 2], "activation": "tanh"},
        "loss": {"kind": "cross_entropy"},
        "optimizer": {"kind": "adam", "lr": 0.01},
        "training": {"epochs": 4, "batch_size": 2, "checkpoint_every": 2},
        "data": {"source": "synthetic", "name": "xor"},
        "gradcheck": {"batch_size": 4},
    }
    for section, value in overrides.items():
        if isinstance(value, dict) and isinstance(raw.get(section), dict):
            raw[section] = {**raw[section], **value}
        else:
            raw[section] = value
    return raw


@pytest.fixture
def make_config() -> Callable[..., RunConfig]:
    """Factory for validated RunConfig objects built from tiny_config_dict."""

    def _make(**overrides: Any) -> RunConfig:
        return RunConfig.from_dict(tiny_config_dict(**overrides))

    return _make


@pytest.fixture
def write_config(tmp_path) -> Callable[..., Path]:
    """Factory writing a tiny run configuration to a YAML file in tmp_path."""

    def _write(name: str = "tiny", **overrides: Any) -> Path:
        raw = tiny_config_dict(name=name, **overrides)
        path = tmp_path / f"{name}.yaml"
        path.write_text(yaml.safe_dump(raw, sort_keys=False), encoding="utf-8")
        return path

    return _write


def _gradients_match(
    report: GradCheckReport, threshold: Optional[float] = None
) -> None:
    """
    Every checked entry agrees within the relative threshold, or both values
    sit below the finite-difference noise floor.
    """
    limit = report.threshold if threshold is None else threshold
    assert report.checked, "no entries were checked"
    bad = [
        e
        for e in report.checked
        if e.relative_error > limit and abs(e.analytic - e.numeric) > ABS_FLOOR
    ]
    assert not bad, "\n".join(
        f"{e.parameter}[{e.index_label}] analytic={e.analytic!r} "
        f"numeric={e.numeric!r} rel={e.relative_error:.3e}"
        for e in bad[:10]
    )


@pytest.fixture
def gradients_match() -> Callable[..., None]:
    return _gradients_match
