"""Finite-difference gradient suites, grouped in tiers.

``ops`` checks every differentiable primitive and loss on its own, ``blocks``
checks one block through 1, 2 and 5 weight-shared recursions, and ``full``
checks the aggregate loss of a two-block, two-recursion model end to end.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autograd import Tape, Variable, grad_check
from .losses import LossConfig, block_loss, mse_loss, ssim_loss, total_loss
from .metrics import SsimConfig, ssim_op
from .model import ModelConfig, ResGuideModel, block_forward, forward
from .ops import ConvParams, concat, conv2d, leaky_relu, mean, mul, residual_add

LEVELS = ("ops", "blocks", "full")
OP_TOL = 1e-5
FULL_TOL = 1e-4
# central differences are exact for ops that are at most quadratic in each
# coordinate, so those take the widest allowed step to minimise roundoff;
# the smooth step balances truncation against roundoff for SSIM-based terms
LINEAR_EPS = 1e-4
SMOOTH_EPS = 3e-5
# networks mix both regimes: accidental near-zero gradients want a larger
# step, leaky ReLU kinks a smaller one. Inputs are redrawn until every leaky
# ReLU input sits KINK_FACTOR steps from zero, so perturbations stay on one
# linear piece; the full model has ~10k activations and needs the finer step
BLOCK_EPS = 1e-5
FULL_EPS = 5e-6
KINK_FACTOR = 10
MAX_DRAWS = 200


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tol: float
    entries: int
    seconds: float
    failure: str | None = None

    @property
    def passed(self) -> bool:
        return self.failure is None and self.max_rel_error < self.tol


def _var(rng, shape, name, scale=1.0, low=None):
    if low is None:
        v = rng.standard_normal(shape) * scale
    else:
        v = rng.uniform(low, 1.0, size=shape)
    return Variable(v, requires_grad=True, name=name)


def _conv(rng, cin, cout, k, name):
    p = ConvParams.zeros(cin, cout, k, np.float64, name)
    p.kernel.value[...] = rng.standard_normal(p.kernel.shape) * 0.5
    p.bias.value[...] = rng.standard_normal(p.bias.shape) * 0.1
    return p


def _projected(out_fn, shape, rng):
    """Scalar ``mean(out * R)`` with a fixed random R, so every output entry matters."""
    proj = Variable(rng.standard_normal(shape))
    return lambda: mean(mul(out_fn(), proj))


def _away_from_zero(rng, shape, name, margin=0.05):
    v = rng.standard_normal(shape)
    v = np.where(np.abs(v) < margin, np.sign(v + 1e-12) * margin, v)
    return Variable(v, requires_grad=True, name=name)


def op_cases(seed: int = 0) -> list[tuple[str, Callable, list, float]]:
    rng = np.random.default_rng(seed)
    cases = []

    x = _var(rng, (1, 2, 5, 5), "x")
    p3 = _conv(rng, 2, 3, 3, "conv3")
    cases.append(("conv2d 3x3", _projected(lambda: conv2d(x, p3), (1, 3, 5, 5), rng),
                  [x, p3.kernel, p3.bias], LINEAR_EPS))

    x1 = _var(rng, (2, 4, 4, 6), "x")
    p1 = _conv(rng, 4, 3, 1, "conv1")
    cases.append(("conv2d 1x1", _projected(lambda: conv2d(x1, p1), (2, 3, 4, 6), rng),
                  [x1, p1.kernel, p1.bias], LINEAR_EPS))

    xl = _away_from_zero(rng, (1, 2, 4, 4), "x")
    cases.append(("leaky_relu", _projected(lambda: leaky_relu(xl, 0.2), (1, 2, 4, 4), rng), [xl], LINEAR_EPS))

    a, b = _var(rng, (1, 2, 3, 3), "a"), _var(rng, (1, 3, 3, 3), "b")
    cases.append(("concat", _projected(lambda: concat([a, b]), (1, 5, 3, 3), rng), [a, b], LINEAR_EPS))

    xr, rr = _var(rng, (1, 3, 4, 4), "x"), _var(rng, (1, 3, 4, 4), "r")
    cases.append(("residual_add", _projected(lambda: residual_add(xr, rr), (1, 3, 4, 4), rng), [xr, rr], LINEAR_EPS))

    # SSIM-based terms use 8x8 images (7-tap window) and correlated pairs: the
    # 11-tap window's corner weights (~1e-6) put border-pixel gradients at the
    # 1e-8 guard, below what double-precision differences resolve to 1e-5
    target = rng.uniform(0, 1, (1, 3, 8, 8))

    def near_target(name):
        v = np.clip(target + rng.normal(0, 0.2, target.shape), 0, 1)
        return Variable(v, requires_grad=True, name=name)

    sx, sy = Variable(target.copy(), requires_grad=True, name="x"), near_target("y")
    cases.append(("ssim", lambda: ssim_op(sx, sy, SsimConfig()), [sx, sy], SMOOTH_EPS))
    ux = Variable(rng.uniform(0, 1, (1, 2, 10, 10)), requires_grad=True, name="x")
    uy = Variable(rng.uniform(0, 1, (1, 2, 10, 10)), requires_grad=True, name="y")
    cases.append(("ssim uniform-8", lambda: ssim_op(ux, uy, SsimConfig("uniform-8")), [ux, uy], SMOOTH_EPS))

    pred = near_target("pred")
    cfg = LossConfig()
    cases.append(("mse_loss", lambda: mse_loss(pred, target), [pred], LINEAR_EPS))
    cases.append(("ssim_loss", lambda: ssim_loss(pred, target, cfg), [pred], SMOOTH_EPS))
    cases.append(("block_loss", lambda: block_loss(pred, target, cfg), [pred], SMOOTH_EPS))
    preds = [near_target(f"pred{k}") for k in range(3)]
    cases.append(("total_loss", lambda: total_loss(preds[:2], preds[2], target, cfg).total, preds, SMOOTH_EPS))
    return cases


def _random_model(cfg: ModelConfig, seed: int) -> ResGuideModel:
    model = ResGuideModel.initialized(cfg, seed, "double")
    rng = np.random.default_rng(seed + 1)
    for conv in model.convs():
        conv.bias.value[...] = rng.normal(0, 0.05, conv.bias.shape)
    return model


def kink_margin(f: Callable) -> float:
    """Smallest |input| over all leaky ReLU applications in one evaluation of ``f``."""
    with Tape() as tape:
        f()
    pre = [np.abs(r.parents[0].value).min() for r in tape.records if r.op == "leaky_relu"]
    return float(min(pre)) if pre else np.inf


def _away_from_kinks(f: Callable, redraw: Callable, eps: float) -> None:
    for _ in range(MAX_DRAWS):
        if kink_margin(f) >= KINK_FACTOR * eps:
            return
        redraw()
    raise RuntimeError("could not draw a test point clear of the leaky ReLU kinks")


def block_cases(seed: int = 0) -> list[tuple[str, Callable, list, float]]:
    cases = []
    for t in (1, 2, 5):
        cfg = ModelConfig(blocks=1, features=4, recursions=t)
        model = _random_model(cfg, seed + t)
        blk = model.blocks[0]
        rng = np.random.default_rng(seed + 10 + t)
        x = Variable(rng.uniform(0, 1, (1, 3, 6, 6)), requires_grad=True, name="x")
        f = _projected(lambda blk=blk, cfg=cfg, x=x: block_forward(x, blk, cfg), (1, 3, 6, 6), rng)

        def redraw(x=x, rng=rng):
            x.value[...] = rng.uniform(0, 1, x.shape)

        _away_from_kinks(f, redraw, BLOCK_EPS)
        cases.append((f"block T={t}", f, [x, *blk.variables()], BLOCK_EPS))
    return cases


def full_cases(seed: int = 0) -> list[tuple[str, Callable, list, float]]:
    cfg = ModelConfig(blocks=2, recursions=2)
    model = _random_model(cfg, seed)
    rng = np.random.default_rng(seed + 99)
    X = rng.uniform(0, 1, (1, 3, 8, 8))
    Y = np.clip(X - rng.uniform(0, 0.3, X.shape), 0, 1)
    loss_cfg = LossConfig()

    def f():
        res = forward(Variable(X), model)
        return total_loss(res.reconstructions, res.merged, Y, loss_cfg).total

    def redraw():
        X[...] = rng.uniform(0, 1, X.shape)
        Y[...] = np.clip(X - rng.uniform(0, 0.3, X.shape), 0, 1)

    _away_from_kinks(f, redraw, FULL_EPS)
    return [("model M=2 T=2 total_loss", f, model.variables(), FULL_EPS)]


def run_level(level: str, seed: int = 0, sample: int = 200) -> list[CheckResult]:
    """Run the suites up to and including ``level``."""
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}")
    groups = [(op_cases, OP_TOL), (block_cases, OP_TOL), (full_cases, FULL_TOL)]
    results = []
    for build, tol in groups[:LEVELS.index(level) + 1]:
        for name, f, params, eps in build(seed):
            t0 = time.perf_counter()
            rep = grad_check(f, params, eps=eps, tol=tol, sample=sample, seed=seed)
            results.append(CheckResult(name, rep.max_rel_error, tol, sum(p.entries for p in rep.params),
                                       time.perf_counter() - t0, rep.failure))
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'entries':>7}  {'max rel err':>11}  {'tol':>7}  result"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        if r.failure:
            status += f" ({r.failure})"
        lines.append(f"{r.name:<{width}}  {r.entries:>7}  {r.max_rel_error:>11.3e}  {r.tol:>7.0e}  {status}")
    return "\n".join(lines)
