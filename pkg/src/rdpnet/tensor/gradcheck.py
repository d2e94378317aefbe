"""Finite-difference gradient verification.

``grad_check`` is the independent oracle for every backward rule: it
re-evaluates a scalar-valued tensor program under central perturbations of
each leaf element and compares against the tape's analytic gradients.
Relative error is |a - b| / max(|a|, |b|, 1e-8).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, ShapeError
from .core import Tensor, backward, no_grad, zero_grads

REL_FLOOR = 1e-8


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_FLOOR)
    return np.abs(a - b) / denom


@dataclass
class LeafReport:
    label: str
    max_rel_err: float
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    passed: bool
    tolerance: float
    step: float
    max_rel_err: float
    leaves: list[LeafReport] = field(default_factory=list)

    def summary(self) -> str:
        lines = [
            f"grad_check: {'PASS' if self.passed else 'FAIL'} "
            f"(max rel err {self.max_rel_err:.3e}, tol {self.tolerance:.1e}, step {self.step:.1e})"
        ]
        for leaf in self.leaves:
            lines.append(
                f"  {leaf.label}: max rel err {leaf.max_rel_err:.3e} at {leaf.worst_index} "
                f"(analytic {leaf.analytic:.6e}, numeric {leaf.numeric:.6e})"
            )
        return "\n".join(lines)


def _eval_scalar(f, leaves) -> float:
    with no_grad():
        out = f(*leaves)
    if not isinstance(out, Tensor):
        raise ShapeError("grad_check program must return a Tensor")
    if out.size != 1:
        raise ShapeError(f"grad_check program must return a scalar, got shape {out.shape}")
    return float(out.data.reshape(()))


def grad_check(f, leaves, step: float = 1e-4, tolerance: float = 1e-4,
               labels=None) -> GradCheckReport:
    """Compare tape gradients of ``f(*leaves)`` against central differences.

    ``f`` must be a deterministic float64 tensor program returning a scalar
    Tensor; determinism is verified by a double evaluation. Leaf buffers
    are perturbed in place during the check and restored afterwards.
    """
    leaves = list(leaves)
    for i, t in enumerate(leaves):
        if not isinstance(t, Tensor) or not t.tracked:
            raise ShapeError(f"leaf {i} must be a tracked Tensor")
        if t.dtype != np.float64:
            raise ShapeError(f"grad_check requires float64 leaves, leaf {i} is {t.dtype.name}")
    if labels is None:
        labels = [f"leaf{i}" for i in range(len(leaves))]

    y1 = f(*leaves)
    if not isinstance(y1, Tensor) or y1.size != 1:
        raise ShapeError("grad_check program must return a scalar Tensor")
    y2_val = _eval_scalar(f, leaves)
    if not (y1.data.reshape(()) == y2_val):
        raise DomainError(
            f"program is not deterministic: {float(y1.data.reshape(())):.17g} vs {y2_val:.17g}"
        )

    zero_grads(leaves)
    backward(y1)
    analytic = [
        t.grad if t.grad is not None else np.zeros(t.shape, dtype=np.float64) for t in leaves
    ]

    reports = []
    overall = 0.0
    for t, label, a in zip(leaves, labels, analytic):
        numeric = np.zeros(t.shape, dtype=np.float64)
        buf = t.data
        buf.setflags(write=True)
        try:
            flat = buf.reshape(-1)
            num_flat = numeric.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + step
                up = _eval_scalar(f, leaves)
                flat[j] = orig - step
                down = _eval_scalar(f, leaves)
                flat[j] = orig
                num_flat[j] = (up - down) / (2.0 * step)
        finally:
            buf.setflags(write=False)
        rel = relative_error(a, numeric)
        if rel.size == 0:
            worst = ()
            mre = 0.0
        else:
            flat_idx = int(np.argmax(rel))
            worst = tuple(int(i) for i in np.unravel_index(flat_idx, rel.shape)) if rel.ndim else ()
            mre = float(rel.reshape(-1)[flat_idx])
        reports.append(
            LeafReport(
                label=label,
                max_rel_err=mre,
                worst_index=worst,
                analytic=float(a.reshape(-1)[flat_idx]) if rel.size else 0.0,
                numeric=float(numeric.reshape(-1)[flat_idx]) if rel.size else 0.0,
            )
        )
        overall = max(overall, mre)

    return GradCheckReport(
        passed=overall < tolerance,
        tolerance=tolerance,
        step=step,
        max_rel_err=overall,
        leaves=reports,
    )
