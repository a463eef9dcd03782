"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    n_checked: int
    tol: float
    n_skipped: int = 0

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tol)


def numeric_gradient(f: Callable[[np.ndarray], float], point: np.ndarray, h: float = 1e-5,
                     indices: Optional[np.ndarray] = None,
                     pattern: Optional[Callable[[], np.ndarray]] = None):
    """Central differences of a scalar function of an array.

    With ``pattern`` (called after each evaluation of ``f``) the second return
    value flags coordinates whose stencil changed the pattern, i.e. crossed a
    kink of a piecewise-linear activation.
    """
    x = np.array(point, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    crossed = np.zeros(flat.size, dtype=bool)
    if pattern is not None:
        pattern()  # drop anything recorded before this call
        f(x)
        base = pattern()
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        if pattern is not None:
            crossed[i] = not np.array_equal(pattern(), base)
        flat[i] = orig - h
        fm = f(x)
        if pattern is not None:
            crossed[i] |= not np.array_equal(pattern(), base)
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    if pattern is None:
        return grad.reshape(x.shape)
    return grad.reshape(x.shape), crossed


def grad_check(
    f: Callable[[Tensor], Tensor],
    point: np.ndarray,
    h: float = 1e-5,
    tol: float = 1e-4,
    max_checks: Optional[int] = None,
    seed: int = 0,
    floor: float = 1e-6,
    pattern: Optional[Callable[[], np.ndarray]] = None,
) -> GradCheckReport:
    """Compare backprop against central differences for ``f`` at ``point``.

    ``f`` maps a tensor to a scalar tensor and must be evaluated in 64-bit
    precision. The relative error per coordinate is
    ``|a - n| / max(|a|, |n|, floor)``; the report carries the maximum.
    With ``max_checks`` only a seeded random subset of coordinates is probed.
    ``pattern`` enables kink detection (see ``numeric_gradient``); coordinates
    whose stencil crosses a kink are excluded and counted in ``n_skipped``.
    """
    point = np.asarray(point, dtype=np.float64)
    x = Tensor(point.copy(), requires_grad=True)
    out = f(x)
    if out.data.dtype != np.float64:
        raise TypeError("grad_check requires a float64 computation")
    out.backward()
    analytic = x.grad.reshape(-1)

    indices = None
    if max_checks is not None and max_checks < point.size:
        rng = np.random.default_rng(seed)
        indices = np.sort(rng.choice(point.size, size=max_checks, replace=False))

    def scalar(arr):
        return float(f(Tensor(arr)).data)

    sel = np.arange(point.size) if indices is None else indices
    skipped = 0
    if pattern is None:
        numeric = numeric_gradient(scalar, point, h=h, indices=indices).reshape(-1)
    else:
        numeric, crossed = numeric_gradient(scalar, point, h=h, indices=indices, pattern=pattern)
        numeric = numeric.reshape(-1)
        skipped = int(crossed[sel].sum())
        sel = sel[~crossed[sel]]
    a, n = analytic[sel], numeric[sel]
    abs_err = np.abs(a - n)
    rel = abs_err / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return GradCheckReport(float(rel.max(initial=0.0)), float(abs_err.max(initial=0.0)), int(sel.size), tol, skipped)
