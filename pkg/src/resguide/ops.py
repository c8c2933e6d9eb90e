"""Differentiable operators: convolution, leaky ReLU, concat and arithmetic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .autograd import Variable, as_variable, record
from .tensor import ArityError, ShapeError, reduce_mean


@dataclass
class ConvParams:
    """Kernel bank (out, in, k, k) and bias (out,) of one convolution."""

    kernel: Variable
    bias: Variable

    @classmethod
    def zeros(cls, cin: int, cout: int, k: int, dtype=np.float32, name: str = "conv") -> "ConvParams":
        if k not in (1, 3):
            raise ValueError(f"kernel size must be 1 or 3, got {k}")
        return cls(
            Variable(np.zeros((cout, cin, k, k), dtype=dtype), requires_grad=True, name=f"{name}.kernel"),
            Variable(np.zeros(cout, dtype=dtype), requires_grad=True, name=f"{name}.bias"),
        )

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def size(self) -> int:
        return self.kernel.shape[2]

    @property
    def count(self) -> int:
        return self.kernel.value.size + self.bias.value.size

    def variables(self) -> list[Variable]:
        return [self.kernel, self.bias]


def _pad(t: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return np.ascontiguousarray(t)
    n, c, h, w = t.shape
    out = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=t.dtype)
    out[:, :, p:p + h, p:p + w] = t
    return out


def _kernel_grad(xp: np.ndarray, g: np.ndarray, k: int) -> np.ndarray:
    """Weight gradient as one im2col matrix product per batch item."""
    n, cin, hp, wp = xp.shape
    cout, h, w = g.shape[1], g.shape[2], g.shape[3]
    acc = np.zeros((cout, cin * k * k), dtype=g.dtype)
    cols = np.empty((cin, k, k, h, w), dtype=xp.dtype)
    for b in range(n):
        for ki in range(k):
            for kj in range(k):
                cols[:, ki, kj] = xp[b, :, ki:ki + h, kj:kj + w]
        acc += g[b].reshape(cout, h * w) @ cols.reshape(cin * k * k, h * w).T
    return acc.reshape(cout, cin, k, k)


def conv2d(x, p: ConvParams) -> Variable:
    """Zero-padded "same" cross-correlation plus per-channel bias."""
    x = as_variable(x)
    xv = x.value
    w = p.kernel.value
    b = p.bias.value
    if xv.ndim != 4 or xv.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d expects {w.shape[1]} input channels, got shape {xv.shape}")
    if xv.dtype != w.dtype:
        raise TypeError(f"dtype mismatch: input {xv.dtype}, kernel {w.dtype}")
    k = w.shape[2]
    pad = (k - 1) // 2
    xp = _pad(xv, pad)
    n, _, h, wd = xv.shape
    out = np.empty((n, w.shape[0], h, wd), dtype=xv.dtype)
    _kernels.correlate_valid(xp, w, b, out)

    def backward(g):
        g = np.ascontiguousarray(g)
        dx = dw = db = None
        if x.requires_grad:
            wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            dx = np.empty_like(xv)
            _kernels.correlate_valid(_pad(g, k - 1 - pad), wf, np.zeros(wf.shape[0], dtype=g.dtype), dx)
        if p.kernel.requires_grad:
            dw = _kernel_grad(xp, g, k)
        if p.bias.requires_grad:
            db = g.sum(axis=(0, 2, 3))
        return dx, dw, db

    return record(out, "conv2d", (x, p.kernel, p.bias), backward)


def leaky_relu(x, slope: float = 0.2) -> Variable:
    if not 0 < slope < 1:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    x = as_variable(x)
    xv = x.value
    s = xv.dtype.type(slope)
    out = np.maximum(xv, xv * s)

    def backward(g):
        dx = np.empty_like(xv)
        _kernels.leaky_relu_grad(xv, np.ascontiguousarray(g), s, dx)
        return (dx,)

    return record(out, "leaky_relu", (x,), backward)


def _binary_shapes(a: Variable, b: Variable, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b, op: str = "add") -> Variable:
    a, b = as_variable(a), as_variable(b)
    _binary_shapes(a, b, op)
    return record(a.value + b.value, op, (a, b), lambda g: (g, g))


def residual_add(x, r) -> Variable:
    return add(x, r, op="residual_add")


def sub(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b)
    _binary_shapes(a, b, "sub")
    return record(a.value - b.value, "sub", (a, b), lambda g: (g, -g))


def mul(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b)
    _binary_shapes(a, b, "mul")
    av, bv = a.value, b.value
    return record(av * bv, "mul", (a, b), lambda g: (g * bv, g * av))


def scale(a, factor: float) -> Variable:
    a = as_variable(a)
    f = a.value.dtype.type(factor)
    return record(a.value * f, "scale", (a,), lambda g: (g * f,))


def divide(a, divisor: float) -> Variable:
    a = as_variable(a)
    d = a.value.dtype.type(divisor)
    return record(a.value / d, "divide", (a,), lambda g: (g / d,))


def mean(a) -> Variable:
    a = as_variable(a)
    av = a.value
    m = reduce_mean(av)
    out = np.full((1, 1, 1, 1), m, dtype=av.dtype)

    def backward(g):
        return (np.full(av.shape, g.reshape(-1)[0] / av.size, dtype=av.dtype),)

    return record(out, "mean", (a,), backward)


def concat(parts) -> Variable:
    if len(parts) == 0:
        raise ArityError("concat needs at least one part")
    parts = [as_variable(p) for p in parts]
    n, _, h, w = parts[0].shape
    for p in parts[1:]:
        if p.value.ndim != 4 or (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            raise ShapeError(f"cannot concatenate {p.shape} with {parts[0].shape}")
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    out = np.concatenate([p.value for p in parts], axis=1)

    def backward(g):
        return tuple(g[:, bounds[j]:bounds[j + 1]] for j in range(len(parts)))

    return record(out, "concat", tuple(parts), backward)
