"""Xavier initialisation, plain RMSProp and the learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autograd import Variable
from .ops import ConvParams


def xavier_bound(p: ConvParams) -> float:
    cout, cin, kh, kw = p.kernel.shape
    return math.sqrt(6.0 / (cin * kh * kw + cout * kh * kw))


def xavier_init(p: ConvParams, rng) -> None:
    """Uniform Glorot init of the kernel in place; bias set to zero."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    a = xavier_bound(p)
    k = p.kernel.value
    k[...] = rng.uniform(-a, a, size=k.shape).astype(k.dtype)
    p.bias.value[...] = 0


@dataclass
class LRSchedule:
    base: float = 1e-3
    milestones: tuple = ()
    factor: float = 0.1

    def __call__(self, iteration: int) -> float:
        drops = sum(1 for m in self.milestones if iteration >= m)
        return self.base * self.factor ** drops


class RMSProp:
    """s <- rho*s + (1-rho)*g^2 ; theta <- theta - lr*g/(sqrt(s)+eps)."""

    def __init__(self, params: Sequence[Variable], lr=1e-3, rho: float = 0.9, eps: float = 1e-8):
        self.params = list(params)
        self.schedule = lr if callable(lr) else LRSchedule(base=lr)
        self.rho = rho
        self.eps = eps
        self.state = [np.zeros_like(p.value) for p in self.params]
        self.iteration = 0
        self.skipped = 0

    def step(self) -> bool:
        """Apply one update. Returns False (and changes nothing) if any gradient is non-finite."""
        grads = [np.zeros_like(p.value) if p.grad is None else p.grad for p in self.params]
        if not all(np.isfinite(g).all() for g in grads):
            self.skipped += 1
            self.iteration += 1
            return False
        lr = self.schedule(self.iteration)
        for p, g, s in zip(self.params, grads, self.state):
            dt = p.value.dtype.type
            s *= dt(self.rho)
            s += dt(1 - self.rho) * g * g
            p.value -= dt(lr) * g / (np.sqrt(s) + dt(self.eps))
        self.iteration += 1
        return True
