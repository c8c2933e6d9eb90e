"""Dense 4-D tensors in (batch, channel, row, column) layout.

Tensors are plain ``numpy.ndarray`` objects of dtype float32 ("single") or
float64 ("double"). The helpers here add the shape checks the rest of the
package relies on; none of them mutate their inputs.
"""

from __future__ import annotations

import sys
from typing import NamedTuple, Sequence, Union

import numpy as np

from ._kernels import sequential_sum

PRECISIONS = {"single": np.float32, "double": np.float64}


class ShapeError(ValueError):
    """Raised when tensor extents are invalid or incompatible."""


class SizeError(ShapeError):
    """Raised when an element count is zero or too large to index."""


class ArityError(ValueError):
    """Raised when an operation receives the wrong number of operands."""


class Shape4(NamedTuple):
    n: int
    c: int
    h: int
    w: int

    @classmethod
    def of(cls, dims: Sequence[int]) -> "Shape4":
        if len(dims) != 4:
            raise ShapeError(f"expected 4 extents, got {len(dims)}")
        shape = cls(*(int(d) for d in dims))
        shape.validate()
        return shape

    def validate(self) -> None:
        if min(self) < 1:
            raise SizeError(f"all extents must be positive, got {tuple(self)}")
        if self.size > sys.maxsize:
            raise SizeError(f"element count {self.size} exceeds index range")

    @property
    def size(self) -> int:
        return self.n * self.c * self.h * self.w


def dtype_of(precision: str):
    try:
        return PRECISIONS[precision]
    except KeyError:
        raise ValueError(f"unknown precision {precision!r}") from None


def zeros(shape: Sequence[int], precision: str = "single") -> np.ndarray:
    shape = Shape4.of(shape)
    return np.zeros(tuple(shape), dtype=dtype_of(precision))


def check4(t: np.ndarray) -> Shape4:
    """Return the shape of ``t`` after checking it is a valid 4-D tensor."""
    if t.ndim != 4:
        raise ShapeError(f"expected a 4-D tensor, got ndim={t.ndim}")
    return Shape4.of(t.shape)


def same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def elementwise(op: str, a: np.ndarray, b: Union[np.ndarray, float]) -> np.ndarray:
    """Entrywise ``add``, ``sub``, ``mul`` or ``scale``.

    ``scale`` takes a scalar second operand; the others take a tensor of the
    same shape (a scalar is also accepted).
    """
    a = np.asarray(a)
    if op == "scale":
        if np.ndim(b) != 0:
            raise ShapeError("scale expects a scalar factor")
        return a * a.dtype.type(b)
    if np.ndim(b) != 0:
        b = np.asarray(b)
        same_shape(a, b)
    else:
        b = a.dtype.type(b)
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown elementwise op {op!r}")


def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    if len(parts) == 0:
        raise ArityError("concat_channels needs at least one part")
    first = check4(parts[0])
    for p in parts[1:]:
        s = check4(p)
        if (s.n, s.h, s.w) != (first.n, first.h, first.w):
            raise ShapeError(f"cannot concatenate {p.shape} with {parts[0].shape}")
    if len(parts) == 1:
        return parts[0]
    return np.concatenate(parts, axis=1)


def channel_band(t: np.ndarray, parts_channels: Sequence[int], j: int) -> np.ndarray:
    """Slice the ``j``-th band out of a tensor built by :func:`concat_channels`."""
    start = int(sum(parts_channels[:j]))
    return t[:, start:start + parts_channels[j]]


def reduce_mean(t: np.ndarray) -> float:
    """Mean of all entries, summed sequentially in double precision."""
    flat = np.ascontiguousarray(t).reshape(-1)
    if flat.size == 0:
        raise SizeError("mean of an empty tensor")
    return sequential_sum(flat) / flat.size


def reduce_sum(t: np.ndarray) -> float:
    return sequential_sum(np.ascontiguousarray(t).reshape(-1))
