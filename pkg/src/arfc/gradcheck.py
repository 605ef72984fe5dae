"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, record_branches


class GradientCheckError(AssertionError):
    pass


@dataclass
class GradcheckReport:
    max_rel_error: float
    worst: tuple  # (tensor label, flat index, analytic, numeric)
    checked: int
    errors: list = field(default_factory=list, repr=False)
    tol: float = 1e-4
    kinks: list = field(default_factory=list)  # (label, flat index) skipped as non-differentiable
    max_kink_fraction: float = 0.02

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol and len(self.kinks) <= self.max_kink_fraction * max(self.checked, 1)


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], labels: Sequence[str] | None = None,
                    *, rel_step: float = 1e-4, tol: float = 1e-4, max_coords: int | None = None,
                    seed: int = 0, floor: float = 1e-6, max_kink_fraction: float = 0.02,
                    raise_on_failure: bool = True) -> GradcheckReport:
    """Compare ``backward`` against central differences.

    ``fn`` rebuilds the graph from the current values of ``tensors`` and
    returns a scalar. Each probed coordinate is perturbed by
    ``rel_step * max(|x|, 1)``. With ``max_coords`` set, at most that many
    coordinates are sampled per tensor.

    Piecewise ops (ReLU, max/median selection, deformable sampling cells)
    fingerprint the branch they take. When either perturbed evaluation takes
    a different branch than the unperturbed one, the stencil straddles a
    kink and the difference quotient says nothing about the derivative; the
    coordinate is recorded in ``kinks`` instead of being compared. Every
    other coordinate lies on a single smooth piece and must match within
    ``tol``. The check also fails if more than ``max_kink_fraction`` of the
    probed coordinates are kinks.
    """
    labels = list(labels) if labels is not None else [f"t{i}" for i in range(len(tensors))]
    for t in tensors:
        if t.dtype != np.float64:
            raise TypeError("gradient checks must run in 64-bit precision")
        t.requires_grad = True
        t.grad = None
    with record_branches() as base:
        out = fn()
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    def evaluate(flat, i, orig, h):
        """Central difference, or None if a perturbed evaluation changed branch."""
        values = []
        for x in (orig + h, orig - h):
            flat[i] = x
            with record_branches() as trace:
                values.append(fn().item())
            if trace != base:
                flat[i] = orig
                return None
        flat[i] = orig
        return (values[0] - values[1]) / (2 * h)

    rng = np.random.default_rng(seed)
    worst = (None, -1, 0.0, 0.0)
    max_err, checked, errors, kinks = 0.0, 0, [], []
    for t, label, grad in zip(tensors, labels, analytic):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for i in coords:
            orig = flat[i]
            num = evaluate(flat, i, orig, rel_step * max(abs(orig), 1.0))
            checked += 1
            if num is None:
                kinks.append((label, int(i)))
                continue
            a = float(grad.reshape(-1)[i])
            err = relative_error(a, num, floor)
            errors.append(err)
            if err > max_err:
                max_err, worst = err, (label, int(i), a, num)
    report = GradcheckReport(max_err, worst, checked, errors, tol, kinks, max_kink_fraction)
    if raise_on_failure and not report.passed:
        label, idx, a, num = worst
        raise GradientCheckError(
            f"gradient mismatch at {label}[{idx}]: analytic={a:.6e} numeric={num:.6e} "
            f"rel={max_err:.2e}; {len(kinks)}/{checked} coordinates at kinks")
    return report
