"""
Finite-difference verification of analytic gradients.

Every parameter entry is perturbed by +/- step and the central difference of
the loss is compared against the backward pass. The loss closure must be
deterministic: batch fixed, dropout masks frozen, batch norm in train mode
with the batch statistics recomputed on the same batch.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from ..utils.logger import get_logger
from .errors import DeterminismError
from .model import Network
from .nn_math import SeedLike, make_rng
from .tensor import Tensor, as_tensor

logger = get_logger(__name__)

DEFAULT_STEP = 1e-5
DEFAULT_THRESHOLD = 1e-5
KINK_MARGIN = 10.0
REL_FLOOR = 1e-12

CSV_HEADER = ["parameter", "index", "analytic", "numeric", "relative_error", "skipped"]

Closure = Callable[[], float]
KinkProbe = Callable[[], List[Tensor]]


def relative_error(analytic: float, numeric: float) -> float:
    """|a - n| / max(|a|, |n|, 1e-12)."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


def _crossed_kink(plus: List[Tensor], minus: List[Tensor], step: float) -> bool:
    margin = KINK_MARGIN * step
    for a_plus, a_minus in zip(plus, minus):
        near = (np.abs(a_plus) <= margin) | (np.abs(a_minus) <= margin)
        flipped = (a_plus > 0) != (a_minus > 0)
        if np.any(near & flipped):
            return True
    return False


def _assert_deterministic(closure: Closure) -> float:
    first = closure()
    second = closure()
    if first != second:
        raise DeterminismError(
            f"loss closure is not reproducible: {first!r} then {second!r}"
        )
    return first


def _central(
    params: Mapping[str, Tensor],
    closure: Closure,
    step: float,
    kinks: Optional[KinkProbe] = None,
) -> Iterator[Tuple[str, Tuple[int, ...], float, bool]]:
    for name, p in params.items():
        for idx in np.ndindex(p.shape):
            original = p[idx]
            p[idx] = original + step
            j_plus = closure()
            k_plus = [a.copy() for a in kinks()] if kinks else []
            p[idx] = original - step
            j_minus = closure()
            k_minus = [a.copy() for a in kinks()] if kinks else []
            p[idx] = original
            skipped = bool(kinks) and _crossed_kink(k_plus, k_minus, step)
            yield name, idx, (j_plus - j_minus) / (2.0 * step), skipped


def finite_diff_grad(
    params: Mapping[str, Tensor], closure: Closure, step: float = DEFAULT_STEP
) -> Dict[str, Tensor]:
    """
    Central differences (J(p + step) - J(p - step)) / (2 step) for every entry.

    Args:
        params: Live arrays the closure reads; perturbed in place and restored
        closure: Loss of the current parameter values
        step: Perturbation size

    Returns:
        Numeric gradients shaped like ``params``

    Raises:
        DeterminismError: If two baseline evaluations disagree.
    """
    _assert_deterministic(closure)
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    for name, idx, numeric, _ in _central(params, closure, step):
        grads[name][idx] = numeric
    return grads


@dataclass
class GradCheckEntry:
    parameter: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    relative_error: float
    skipped: bool = False

    @property
    def index_label(self) -> str:
        return ",".join(str(i) for i in self.index)


@dataclass
class GradCheckReport:
    """Entry-by-entry comparison of analytic and numeric gradients."""

    entries: List[GradCheckEntry] = field(default_factory=list)
    step: float = DEFAULT_STEP
    threshold: float = DEFAULT_THRESHOLD
    family: str = ""

    @property
    def checked(self) -> List[GradCheckEntry]:
        return [e for e in self.entries if not e.skipped]

    @property
    def skipped(self) -> List[GradCheckEntry]:
        return [e for e in self.entries if e.skipped]

    @property
    def max_error(self) -> float:
        errors = [e.relative_error for e in self.checked]
        return max(errors) if errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error <= self.threshold

    @property
    def failures(self) -> List[GradCheckEntry]:
        return [e for e in self.checked if e.relative_error > self.threshold]

    def worst(self, count: int = 10) -> List[GradCheckEntry]:
        ranked = sorted(self.checked, key=lambda e: e.relative_error, reverse=True)
        return ranked[:count]

    def per_parameter(self) -> Dict[str, float]:
        """Largest relative error of each parameter tensor, skipped entries excluded."""
        out: Dict[str, float] = {}
        for e in self.checked:
            out[e.parameter] = max(out.get(e.parameter, 0.0), e.relative_error)
        return out

    def to_text(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        lines = [
            f"gradient check {verdict}" + (f" ({self.family})" if self.family else ""),
            f"step: {self.step:g}",
            f"threshold: {self.threshold:g}",
            f"entries: {len(self.entries)} checked: {len(self.checked)} "
            f"skipped: {len(self.skipped)}",
            f"max relative error: {self.max_error:.3e}",
        ]
        for name, err in self.per_parameter().items():
            lines.append(f"  {name}: {err:.3e}")
        for e in self.failures:
            lines.append(
                f"  FAIL {e.parameter}[{e.index_label}] analytic={e.analytic:.10e} "
                f"numeric={e.numeric:.10e} rel={e.relative_error:.3e}"
            )
        return "\n".join(lines) + "\n"

    def write_text(self, path: Path) -> Path:
        path.write_text(self.to_text(), encoding="utf-8")
        return path

    def write_csv(self, path: Path) -> Path:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_HEADER)
            for e in self.entries:
                writer.writerow(
                    [
                        e.parameter,
                        e.index_label,
                        repr(e.analytic),
                        repr(e.numeric),
                        repr(e.relative_error),
                        int(e.skipped),
                    ]
                )
        logger.debug("Wrote %d gradient-check rows to %s", len(self.entries), path)
        return path


def _prepare(model: Network, inputs: Tensor, targets: Tensor) -> Closure:
    # One training forward draws the dropout masks that stay frozen afterwards.
    model.loss(inputs, targets, train=True)
    model.freeze_dropout(True)
    return lambda: model.loss(inputs, targets, train=True)


def check(
    model: Network,
    inputs: Tensor,
    targets: Tensor,
    step: float = DEFAULT_STEP,
    threshold: float = DEFAULT_THRESHOLD,
    parameters: Optional[List[str]] = None,
) -> GradCheckReport:
    """
    Compare backward-pass gradients with central differences on one batch.

    ReLU-family units whose pre-activation crosses zero within
    10 * step between the two perturbed evaluations make that entry
    non-differentiable; such entries are reported as skipped.

    Args:
        model: Any network
        inputs: Fixed batch inputs
        targets: Fixed batch targets
        step: Perturbation size
        threshold: Largest relative error that still passes
        parameters: Restrict the check to these parameter names

    Returns:
        GradCheckReport with one entry per scalar parameter
    """
    inputs, targets = as_tensor(inputs), as_tensor(targets)
    closure = _prepare(model, inputs, targets)
    try:
        _assert_deterministic(closure)
        _, analytic = model.gradients(inputs, targets)
        params = model.parameters()
        if parameters is not None:
            params = {name: params[name] for name in parameters}
        report = GradCheckReport(step=step, threshold=threshold, family=model.family)
        for name, idx, numeric, skipped in _central(
            params, closure, step, model.kinked_preactivations
        ):
            value = float(analytic[name][idx])
            entry = GradCheckEntry(
                name, idx, value, numeric, relative_error(value, numeric), skipped
            )
            if skipped:
                logger.debug("Skipped %s%s: pre-activation crosses a kink", name, idx)
            else:
                logger.debug(
                    "%s%s analytic=%.10e numeric=%.10e rel=%.3e",
                    name, idx, value, numeric, entry.relative_error,
                )
            report.entries.append(entry)
    finally:
        model.freeze_dropout(False)
    logger.info(
        "Gradient check on %d entries: max relative error %.3e (%s)",
        len(report.entries), report.max_error, "pass" if report.passed else "fail",
    )
    return report


def preactivation_check(
    model: Network,
    inputs: Tensor,
    targets: Tensor,
    step: float = DEFAULT_STEP,
    threshold: float = DEFAULT_THRESHOLD,
) -> GradCheckReport:
    """
    Check each layer's error rate against differences taken on its pre-activation.

    Works for models exposing ``layers`` with a ``probe`` slot and a
    ``deltas`` mapping filled by backward (feed-forward and convolutional
    networks). Entries are named ``layers.{i}.a``.
    """
    inputs, targets = as_tensor(inputs), as_tensor(targets)
    layers = getattr(model, "layers", [])
    closure = _prepare(model, inputs, targets)
    try:
        model.gradients(inputs, targets)
        deltas: Dict[int, Tensor] = getattr(model, "deltas")
        probes: Dict[str, Tensor] = {}
        for i, layer in enumerate(layers):
            if hasattr(layer, "probe") and i in deltas:
                layer.probe = np.zeros_like(deltas[i])
                probes[f"layers.{i}.a"] = layer.probe
        report = GradCheckReport(step=step, threshold=threshold, family=model.family)
        for name, idx, numeric, skipped in _central(
            probes, closure, step, model.kinked_preactivations
        ):
            value = float(deltas[int(name.split(".")[1])][idx])
            report.entries.append(
                GradCheckEntry(
                    name, idx, value, numeric, relative_error(value, numeric), skipped
                )
            )
    finally:
        for layer in layers:
            if hasattr(layer, "probe"):
                layer.probe = None
        model.freeze_dropout(False)
    return report


def directional_check(
    model: Network,
    inputs: Tensor,
    targets: Tensor,
    step: float = DEFAULT_STEP,
    seed: SeedLike = 0,
) -> float:
    """
    Fast smoke test along one random unit direction.

    Returns:
        Relative error between <grad, d> and (J(p + step d) - J(p - step d)) / (2 step)
    """
    inputs, targets = as_tensor(inputs), as_tensor(targets)
    rng = make_rng(seed)
    closure = _prepare(model, inputs, targets)
    try:
        _, analytic = model.gradients(inputs, targets)
        params = model.parameters()
        direction = {name: rng.standard_normal(p.shape) for name, p in params.items()}
        norm = np.sqrt(sum(float(np.sum(d * d)) for d in direction.values()))
        projected = sum(
            float(np.sum(analytic[name] * d)) for name, d in direction.items()
        ) / norm
        originals = {name: p.copy() for name, p in params.items()}

        def shifted(sign: float) -> float:
            for name, p in params.items():
                np.copyto(p, originals[name] + sign * step * direction[name] / norm)
            return closure()

        numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * step)
        for name, p in params.items():
            np.copyto(p, originals[name])
    finally:
        model.freeze_dropout(False)
    return relative_error(projected, numeric)
