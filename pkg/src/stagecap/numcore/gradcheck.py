"""Finite-difference gradient checking (the oracle side of backward)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, Var


@dataclass
class GradCheckReport:
    """Max relative error per parameter plus the overall worst case."""

    per_param: dict[str, float] = field(default_factory=dict)
    max_rel_err: float = 0.0

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_err < tolerance


def grad_check(
    loss_builder: Callable[[], Var],
    params: Sequence[Tensor],
    *,
    step: float = 1e-5,
    max_coords: int = 16,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    `loss_builder` must rebuild the forward graph from current parameter
    data and return the scalar loss Var; it is re-invoked after each
    perturbation. Tensors larger than `max_coords` are probed at sampled
    coordinates. Relative error per coordinate is
    |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-8).
    """
    if rng is None:
        rng = np.random.default_rng(0)

    loss = loss_builder()
    analytic = loss.graph.backward(loss)

    report = GradCheckReport()
    for p in params:
        if not p.requires_grad:
            continue
        g_a = analytic.get(p)
        if g_a is None:
            g_a = np.zeros(p.shape)
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= max_coords:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        worst = 0.0
        for c in coords:
            original = flat[c]
            flat[c] = original + step
            up = float(loss_builder().value)
            flat[c] = original - step
            down = float(loss_builder().value)
            flat[c] = original
            g_fd = (up - down) / (2.0 * step)
            g_an = float(g_a.reshape(-1)[c])
            denom = max(abs(g_an), abs(g_fd), 1e-8)
            worst = max(worst, abs(g_an - g_fd) / denom)
        name = p.name or f"param@{id(p):x}"
        report.per_param[name] = worst
        report.max_rel_err = max(report.max_rel_err, worst)
    return report
