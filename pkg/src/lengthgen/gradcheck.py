"""Central finite-difference gradient checking (float64)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckResult:
    name: str
    worst_rel_error: float
    coords: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.worst_rel_error <= tol


def check_gradients(fn, inputs: dict[str, Tensor], h: float = 1e-5, floor: float = 1e-6, max_coords: int | None = None,
                    rng: np.random.Generator | None = None) -> list[GradCheckResult]:
    """Compare ``backward`` gradients of the scalar ``fn()`` with central differences.

    Relative error per coordinate is ``|analytic - numeric| / (|analytic| + floor)``.
    At ``h = 1e-5`` in float64 the difference quotient itself is only good to
    roughly 1e-11 absolute, so ``floor`` defaults to 1e-6 rather than 0.
    ``max_coords`` subsamples coordinates per input (uniformly, via ``rng``).
    """
    for t in inputs.values():
        t.grad = None
    loss = fn()
    backward(loss)
    results = []
    for name, t in inputs.items():
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = float(fn().data)
            flat[i] = orig - h
            down = float(fn().data)
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / (abs(a) + floor))
        results.append(GradCheckResult(name, worst, len(idx)))
    return results
