"""Central finite-difference checks against the tape's analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor


@dataclass
class GradCheckResult:
    name: str
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        scale = max(abs(self.analytic), abs(self.numeric))
        if scale < 1e-10:
            return 0.0
        return abs(self.analytic - self.numeric) / scale


def numeric_grad(f: Callable[[], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Elementwise central differences of ``f`` with respect to ``x`` (mutated and restored)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = f()
        flat[k] = orig - step
        down = f()
        flat[k] = orig
        gf[k] = (up - down) / (2 * step)
    return g


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    rng: np.random.Generator,
    step: float = 1e-5,
    coords_per_param: int = 2,
) -> list[GradCheckResult]:
    """Compare analytic and central-difference derivatives of ``loss_fn``.

    For every parameter this checks one random direction (which touches every
    element at once) plus ``coords_per_param`` single coordinates.
    ``loss_fn`` must be deterministic.
    """
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {p.name: p.grad.copy() for p in params}

    def value() -> float:
        return float(loss_fn().value)

    results = []
    for p in params:
        ga = analytic[p.name]
        direction = rng.standard_normal(p.shape)
        base = p.value.copy()
        p.value[...] = base + step * direction
        up = value()
        p.value[...] = base - step * direction
        down = value()
        p.value[...] = base
        results.append(GradCheckResult(f"{p.name}[dir]", float((ga * direction).sum()), (up - down) / (2 * step)))
        flat = p.value.reshape(-1)
        for k in rng.choice(flat.size, size=min(coords_per_param, flat.size), replace=False):
            orig = flat[k]
            flat[k] = orig + step
            up = value()
            flat[k] = orig - step
            down = value()
            flat[k] = orig
            results.append(GradCheckResult(f"{p.name}[{k}]", float(ga.reshape(-1)[k]), (up - down) / (2 * step)))
    return results
