"""SSIM and PSNR.

SSIM uses valid windows only and treats channels independently; the index
is the mean of the SSIM map over batch, channels and window positions.
Moments are computed in double precision whatever the input precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autograd import Variable, as_variable, record
from .tensor import reduce_mean, same_shape

WINDOWS = ("gaussian-11-sigma-1.5", "uniform-8")


@dataclass(frozen=True)
class SsimConfig:
    window: str = "gaussian-11-sigma-1.5"
    dynamic_range: float = 1.0
    k1: float = 0.01
    k2: float = 0.03

    def __post_init__(self):
        if self.window not in WINDOWS:
            raise ValueError(f"unknown SSIM window {self.window!r}; choose from {WINDOWS}")
        if self.dynamic_range <= 0 or self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("SSIM constants must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


def window_1d(cfg: SsimConfig, h: int, w: int) -> np.ndarray:
    """Separable window taps, shrunk to fit images smaller than the window."""
    if cfg.window == "uniform-8":
        size = min(8, h, w)
        return np.full(size, 1.0 / size)
    size = min(11, h, w)
    if size % 2 == 0:
        size -= 1
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * 1.5 ** 2))
    return g / g.sum()


def _filter(t: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    lh = t.shape[-2] - k + 1
    tmp = g[0] * t[..., 0:lh, :]
    for i in range(1, k):
        tmp = tmp + g[i] * t[..., i:i + lh, :]
    lw = t.shape[-1] - k + 1
    out = g[0] * tmp[..., 0:lw]
    for j in range(1, k):
        out = out + g[j] * tmp[..., j:j + lw]
    return out


def _filter_adjoint(d: np.ndarray, g: np.ndarray, h: int, w: int) -> np.ndarray:
    k = g.size
    lh, lw = d.shape[-2], d.shape[-1]
    tmp = np.zeros(d.shape[:-1] + (w,))
    for j in range(k):
        tmp[..., j:j + lw] += g[j] * d
    out = np.zeros(d.shape[:-2] + (h, w))
    for i in range(k):
        out[..., i:i + lh, :] += g[i] * tmp
    return out


def _ssim_parts(x: np.ndarray, y: np.ndarray, cfg: SsimConfig):
    x = x.astype(np.float64, copy=False)
    y = y.astype(np.float64, copy=False)
    g = window_1d(cfg, x.shape[-2], x.shape[-1])
    # second moments are formed about a shared per-channel offset; the index
    # does not depend on it, but it removes most of the E[x^2] - mu^2 cancellation
    c = 0.5 * (x.mean(axis=(-2, -1), keepdims=True) + y.mean(axis=(-2, -1), keepdims=True))
    xc, yc = x - c, y - c
    mxc, myc = _filter(xc, g), _filter(yc, g)
    exx, eyy, exy = _filter(xc * xc, g), _filter(yc * yc, g), _filter(xc * yc, g)
    mx, my = mxc + c, myc + c
    c1, c2 = cfg.c1, cfg.c2
    a1 = 2 * mx * my + c1
    a2 = 2 * (exy - mxc * myc) + c2
    b1 = mx * mx + my * my + c1
    b2 = (exx - mxc * mxc) + (eyy - myc * myc) + c2
    smap = (a1 * a2) / (b1 * b2)
    return g, (xc, yc, mx, my, mxc, myc, a1, a2, b1, b2, smap)


def ssim(x: np.ndarray, y: np.ndarray, cfg: SsimConfig = SsimConfig()) -> float:
    same_shape(x, y)
    _, parts = _ssim_parts(x, y, cfg)
    return reduce_mean(parts[-1])


def ssim_map(x: np.ndarray, y: np.ndarray, cfg: SsimConfig = SsimConfig()) -> np.ndarray:
    same_shape(x, y)
    return _ssim_parts(x, y, cfg)[1][-1]


def ssim_op(x, y, cfg: SsimConfig = SsimConfig()) -> Variable:
    """SSIM index as a graph node with gradients for both arguments."""
    x, y = as_variable(x), as_variable(y)
    same_shape(x.value, y.value)
    xv, yv = x.value, y.value
    g, (xc, yc, mx, my, mxc, myc, a1, a2, b1, b2, smap) = _ssim_parts(xv, yv, cfg)
    out = np.full((1, 1, 1, 1), reduce_mean(smap), dtype=xv.dtype)
    h, w = xv.shape[-2], xv.shape[-1]

    def backward(up):
        u = float(up.reshape(-1)[0]) / smap.size
        den = b1 * b2
        d_a1 = u * a2 / den
        d_a2 = u * a1 / den
        d_b1 = -u * smap / b1
        d_b2 = -u * smap / b2
        # a1, a2, b1, b2 as functions of the five windowed moments about the offset
        d_exy = 2 * d_a2
        d_ex2 = d_b2
        d_mx = 2 * my * d_a1 + 2 * mx * d_b1 - 2 * myc * d_a2 - 2 * mxc * d_b2
        d_my = 2 * mx * d_a1 + 2 * my * d_b1 - 2 * mxc * d_a2 - 2 * myc * d_b2
        back_exy = _filter_adjoint(d_exy, g, h, w)
        back_e2 = _filter_adjoint(d_ex2, g, h, w)
        gx = gy = None
        if x.requires_grad:
            gx = (_filter_adjoint(d_mx, g, h, w) + 2 * xc * back_e2 + yc * back_exy).astype(xv.dtype)
        if y.requires_grad:
            gy = (_filter_adjoint(d_my, g, h, w) + 2 * yc * back_e2 + xc * back_exy).astype(yv.dtype)
        return gx, gy

    return record(out, "ssim", (x, y), backward)


def mse(x: np.ndarray, y: np.ndarray) -> float:
    same_shape(x, y)
    d = x.astype(np.float64) - y.astype(np.float64)
    return reduce_mean(d * d)


def psnr(x: np.ndarray, y: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical inputs."""
    err = mse(x, y)
    if err == 0:
        return math.inf
    return 10 * math.log10(peak * peak / err)


def format_psnr(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.6f}"
