"""Reverse-mode differentiation over a define-by-run graph.

Each :class:`Variable` produced by an operation keeps references to its
parents and a closure mapping the upstream gradient to parent gradients.
:func:`backward` walks everything reachable from the loss in reverse creation
order, so a parameter used by several operations (recursive weight sharing)
receives the sum of its partial gradients.

A :class:`Tape` is optional. When one is active on the current thread every
operation is appended to it, which is how op counts and parameter accesses
are measured.
"""

from __future__ import annotations

import itertools
import math
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

_ids = itertools.count()
_local = threading.local()


class ContractError(ValueError):
    """Raised when an operation is called outside its preconditions."""


class Variable:
    __slots__ = ("value", "grad", "id", "op", "parents", "requires_grad", "name", "_backward")

    def __init__(self, value, requires_grad=False, name=None, *, op="leaf", parents=(), backward=None):
        self.value = np.asarray(value)
        self.grad = None
        self.id = next(_ids)
        self.op = op
        self.parents = tuple(parents)
        self.requires_grad = requires_grad
        self.name = name
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Variable{label}(op={self.op}, shape={self.shape}, grad={self.requires_grad})"


class Tape:
    """Ordered record of operations executed while the tape is active."""

    def __init__(self):
        self.records: list[Variable] = []

    def __enter__(self):
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.tapes.pop()
        return False

    def reset(self) -> None:
        self.records.clear()

    def count(self, op: Optional[str] = None) -> int:
        if op is None:
            return len(self.records)
        return sum(1 for r in self.records if r.op == op)

    def accesses(self) -> Counter:
        """Number of recorded operations reading each variable, keyed by id."""
        c = Counter()
        for r in self.records:
            for p in r.parents:
                c[p.id] += 1
        return c


def current_tape() -> Optional[Tape]:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


def record(value, op: str, parents: Sequence[Variable], backward: Callable) -> Variable:
    """Create the output node of an operation and log it on the active tape.

    ``backward(g)`` must return one gradient (or ``None``) per parent.
    """
    needs = any(p.requires_grad for p in parents)
    out = Variable(value, requires_grad=needs, op=op, parents=parents,
                   backward=backward if needs else None)
    tape = current_tape()
    if tape is not None:
        tape.records.append(out)
    return out


def as_variable(x) -> Variable:
    return x if isinstance(x, Variable) else Variable(x)


def detach(v: Variable) -> Variable:
    return Variable(v.value, requires_grad=False, name=v.name, op="detach")


def zero_grads(params: Sequence[Variable]) -> None:
    for p in params:
        p.zero_grad()


def backward(loss: Variable) -> None:
    if loss.value.shape != (1, 1, 1, 1):
        raise ContractError(f"backward needs a scalar-shaped loss, got {loss.value.shape}")
    if not loss.requires_grad:
        return

    nodes = {}
    stack = [loss]
    while stack:
        v = stack.pop()
        if v.id in nodes or not v.requires_grad:
            continue
        nodes[v.id] = v
        stack.extend(v.parents)

    pending = {loss.id: np.ones_like(loss.value)}
    for vid in sorted(nodes, reverse=True):
        v = nodes[vid]
        g = pending.pop(vid, None)
        if g is None:
            continue
        if v.grad is None:
            v.grad = np.zeros_like(v.value)
        v.grad += g
        if v._backward is None:
            continue
        for p, pg in zip(v.parents, v._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if p.id in pending:
                pending[p.id] = pending[p.id] + pg
            else:
                pending[p.id] = pg


@dataclass
class ParamCheck:
    name: str
    entries: int
    max_rel_error: float
    worst_index: tuple


@dataclass
class GradCheckReport:
    tol: float
    params: list[ParamCheck] = field(default_factory=list)
    failure: Optional[str] = None

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    @property
    def passed(self) -> bool:
        return self.failure is None and self.max_rel_error < self.tol


def rel_error(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(f: Callable[[], Variable], params: Sequence[Variable], eps: float = 1e-6,
               tol: float = 1e-5, sample: int = 200, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients from :func:`backward` with central differences.

    ``f`` rebuilds the graph and returns a scalar Variable. Parameters larger
    than ``sample`` entries are checked on a random subset of that size.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ContractError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    for p in params:
        if p.value.dtype != np.float64:
            raise ContractError("grad_check requires double precision parameters")

    zero_grads(params)
    loss = f()
    backward(loss)
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for k, (p, a) in enumerate(zip(params, analytic)):
        name = p.name or f"param{k}"
        size = p.value.size
        flat_idx = np.arange(size) if size <= sample else rng.choice(size, sample, replace=False)
        worst, worst_at = 0.0, ()
        for i in flat_idx:
            where = np.unravel_index(i, p.value.shape)
            orig = p.value[where]
            p.value[where] = orig + eps
            fp = float(f().value.reshape(-1)[0])
            p.value[where] = orig - eps
            fm = float(f().value.reshape(-1)[0])
            p.value[where] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                report.failure = f"non-finite objective perturbing {name}{tuple(int(w) for w in where)}"
                return report
            num = (fp - fm) / (2 * eps)
            err = float(rel_error(a.reshape(-1)[i], num))
            if err > worst or not worst_at:
                worst, worst_at = err, tuple(int(w) for w in where)
        report.params.append(ParamCheck(name, len(flat_idx), worst, worst_at))
    zero_grads(params)
    return report
