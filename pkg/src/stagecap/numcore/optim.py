"""Adam with linear warmup and stepwise decay."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..errors import DivergenceError
from .tensor import Tensor


@dataclass(frozen=True)
class LrSchedule:
    """Effective learning rate: linear warmup, then multiply by
    decay_factor after every decay_every post-warmup steps
    (decay_every=0 disables decay)."""

    base: float
    warmup_steps: int = 0
    decay_factor: float = 1.0
    decay_every: int = 0

    def at(self, step: int) -> float:
        """Rate for a 1-based step index."""
        if step < 1:
            raise ValueError(f"step must be >= 1, got {step}")
        if self.warmup_steps > 0 and step <= self.warmup_steps:
            return self.base * step / self.warmup_steps
        lr = self.base
        if self.decay_every > 0:
            completed = (step - self.warmup_steps - 1) // self.decay_every
            lr *= self.decay_factor ** completed
        return lr


class Adam:
    """Standard Adam with bias correction over a fixed parameter list."""

    def __init__(
        self,
        params: Sequence[Tensor],
        schedule: LrSchedule,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.schedule = schedule
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros(p.shape) for p in self.params]
        self._v = [np.zeros(p.shape) for p in self.params]

    def step(self, grads: Mapping[Tensor, np.ndarray]) -> float:
        """Apply one update; params missing from `grads` get zero gradient.

        Refuses the step (raising DivergenceError) if any gradient is
        non-finite, leaving parameters and state untouched.
        """
        for p, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise DivergenceError(
                    f"non-finite gradient for {p.name!r} at step {self.step_count + 1}",
                    step=self.step_count + 1,
                )
        self.step_count += 1
        t = self.step_count
        lr = self.schedule.at(t)
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        zero = None
        for i, p in enumerate(self.params):
            g = grads.get(p)
            if g is None:
                if zero is None or zero.shape != p.shape:
                    zero = np.zeros(p.shape)
                g = zero
            m = self._m[i]
            v = self._v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - lr * update
        return lr
