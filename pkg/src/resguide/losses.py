"""Per-block MSE + SSIM loss and the deep-supervision aggregate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autograd import Variable, as_variable, record
from .metrics import SsimConfig, ssim_op
from .ops import add, divide, scale
from .tensor import ArityError, ShapeError, reduce_mean

SSIM_FLOOR = 1e-3


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1.0
    epsilon: float = 1e-4
    ssim: SsimConfig = SsimConfig()

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


class ClampCounter:
    """Counts SSIM values floored before the reciprocal."""

    def __init__(self):
        self.events = 0


def mse_loss(pred, target) -> Variable:
    pred = as_variable(pred)
    pv = pred.value
    tv = np.asarray(target)
    if pv.shape != tv.shape:
        raise ShapeError(f"mse_loss: shape mismatch {pv.shape} vs {tv.shape}")
    d = pv - tv.astype(pv.dtype, copy=False)
    out = np.full((1, 1, 1, 1), reduce_mean(d * d), dtype=pv.dtype)

    def backward(g):
        return (d * pv.dtype.type(2.0 * float(g.reshape(-1)[0]) / d.size),)

    return record(out, "mse_loss", (pred,), backward)


def log_inverse(g: Variable, epsilon: float, counter: ClampCounter | None = None) -> Variable:
    """ln(1/g + epsilon), with g floored at ``SSIM_FLOOR`` (zero gradient there)."""
    gv = float(g.value.reshape(-1)[0])
    clamped = not gv >= SSIM_FLOOR
    if clamped:
        if counter is not None:
            counter.events += 1
        gv = SSIM_FLOOR
    val = math.log(1.0 / gv + epsilon)
    out = np.full((1, 1, 1, 1), val, dtype=g.value.dtype)

    def backward(up):
        if clamped:
            return (np.zeros_like(up),)
        return (up * (-1.0 / (gv + epsilon * gv * gv)),)

    return record(out, "log_inverse", (g,), backward)


def ssim_loss(pred, target, cfg: LossConfig = LossConfig(), counter: ClampCounter | None = None) -> Variable:
    pred = as_variable(pred)
    g = ssim_op(pred, Variable(np.asarray(target).astype(pred.dtype, copy=False)), cfg.ssim)
    return log_inverse(g, cfg.epsilon, counter)


def block_loss(pred, target, cfg: LossConfig = LossConfig(), counter: ClampCounter | None = None) -> Variable:
    return add(mse_loss(pred, target), scale(ssim_loss(pred, target, cfg, counter), cfg.lam))


@dataclass
class LossBreakdown:
    total: Variable
    blocks: list[Variable]
    merge: Variable
    clamp_events: int = 0

    def values(self) -> list[float]:
        """[total, block_1 .. block_M, merge] as Python floats."""
        terms = [self.total, *self.blocks, self.merge]
        return [float(t.value.reshape(-1)[0]) for t in terms]


def total_loss(block_preds, merged_pred, target, cfg: LossConfig = LossConfig()) -> LossBreakdown:
    """Average of the M block losses and the merged-output loss."""
    if len(block_preds) == 0:
        raise ArityError("total_loss needs at least one block prediction")
    counter = ClampCounter()
    terms = [block_loss(p, target, cfg, counter) for p in block_preds]
    merge = block_loss(merged_pred, target, cfg, counter)
    acc = terms[0]
    for t in terms[1:]:
        acc = add(acc, t)
    acc = add(acc, merge)
    total = divide(acc, len(terms) + 1)
    return LossBreakdown(total, terms, merge, counter.events)
