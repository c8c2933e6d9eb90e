"""Synthetic rainy/clean pairs, patch sampling and binary PPM I/O.

Images are 4-D tensors of shape (1, 3, H, W) with values in [0, 1]. All
randomness flows from integer seeds through ``numpy.random.SeedSequence``
and PCG64, so a corpus is reproducible from its master seed alone.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .tensor import dtype_of

log = logging.getLogger(__name__)


class ImageFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DataError(RuntimeError):
    """Raised when a corpus directory is missing or inconsistent."""


def derive_seed(*keys: int) -> int:
    """Stable 64-bit seed derived from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


def _rng(*keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in keys])))


# rain

RAIN_PRESETS = {
    "heavy": dict(count=(80, 160), angle=(-25.0, 25.0), length=(10.0, 26.0), width=1.2,
                  intensity=(0.25, 0.6), blur_sigma=0.6),
    "light": dict(count=(10, 40), angle=(-25.0, 25.0), length=(6.0, 16.0), width=1.0,
                  intensity=(0.15, 0.45), blur_sigma=0.5),
}


@dataclass(frozen=True)
class RainSpec:
    """Streak parameters.

    Each image draws one dominant direction from ``angle`` (degrees from
    vertical); individual streaks deviate from it by up to ``angle_jitter``.
    Lengths and widths are in pixels.
    """

    mode: str = "heavy"
    count: tuple = RAIN_PRESETS["heavy"]["count"]
    angle: tuple = RAIN_PRESETS["heavy"]["angle"]
    length: tuple = RAIN_PRESETS["heavy"]["length"]
    width: float = RAIN_PRESETS["heavy"]["width"]
    intensity: tuple = RAIN_PRESETS["heavy"]["intensity"]
    blur_sigma: float = RAIN_PRESETS["heavy"]["blur_sigma"]
    angle_jitter: float = 4.0
    seed: int = 0

    @classmethod
    def preset(cls, mode: str, seed: int = 0) -> "RainSpec":
        if mode not in RAIN_PRESETS:
            raise ValueError(f"unknown rain mode {mode!r}")
        return cls(mode=mode, seed=seed, **RAIN_PRESETS[mode])

    def with_seed(self, seed: int) -> "RainSpec":
        return replace(self, seed=seed)


def _segment_coverage(px, py, x0, y0, x1, y1, width):
    dx, dy = x1 - x0, y1 - y0
    ll = dx * dx + dy * dy
    t = ((px - x0) * dx + (py - y0) * dy) / ll if ll > 0 else np.zeros_like(px)
    t = np.clip(t, 0.0, 1.0)
    qx, qy = px - (x0 + t * dx), py - (y0 + t * dy)
    d = np.sqrt(qx * qx + qy * qy)
    return np.clip(width / 2 + 0.5 - d, 0.0, 1.0)


def rain_layer(h: int, w: int, spec: RainSpec, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Non-negative streak layer of shape (h, w) in double precision, and its streak count."""
    lo, hi = spec.count
    count = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
    layer = np.zeros((h, w))
    if count == 0:
        return layer, 0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    pad = spec.width + 1
    base = rng.uniform(*spec.angle)
    for _ in range(count):
        cx = rng.uniform(-0.1 * w, 1.1 * w)
        cy = rng.uniform(-0.1 * h, 1.1 * h)
        theta = math.radians(base + rng.uniform(-spec.angle_jitter, spec.angle_jitter))
        length = rng.uniform(*spec.length)
        alpha = rng.uniform(*spec.intensity)
        hx, hy = 0.5 * length * math.sin(theta), 0.5 * length * math.cos(theta)
        x0, y0, x1, y1 = cx - hx, cy - hy, cx + hx, cy + hy
        c0 = max(int(math.floor(min(x0, x1) - pad)), 0)
        c1 = min(int(math.ceil(max(x0, x1) + pad)) + 1, w)
        r0 = max(int(math.floor(min(y0, y1) - pad)), 0)
        r1 = min(int(math.ceil(max(y0, y1) + pad)) + 1, h)
        if c0 >= c1 or r0 >= r1:
            continue
        cov = _segment_coverage(xs[r0:r1, c0:c1] + 0.5, ys[r0:r1, c0:c1] + 0.5, x0, y0, x1, y1, spec.width)
        layer[r0:r1, c0:c1] += alpha * cov
    if spec.blur_sigma > 0:
        layer = gaussian_filter(layer, spec.blur_sigma, mode="constant")
    return np.maximum(layer, 0.0), count


def synthesize_rain(clean: np.ndarray, spec: RainSpec, return_count: bool = False):
    """Add bright blurred streaks: ``clip(clean + S, 0, 1)`` with S >= 0 shared by all channels."""
    rng = _rng(spec.seed, 1)
    out = np.empty_like(clean)
    total = 0
    n, _, h, w = clean.shape
    for b in range(n):
        layer, count = rain_layer(h, w, spec, rng)
        total += count
        if count == 0:
            out[b] = clean[b]
        else:
            out[b] = np.clip(clean[b].astype(np.float64) + layer[None], 0.0, 1.0)
    return (out, total) if return_count else out


def add_gaussian_noise(clean: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return clean.copy()
    noise = _rng(seed, 2).normal(0.0, sigma, size=clean.shape)
    return np.clip(clean.astype(np.float64) + noise, 0.0, 1.0).astype(clean.dtype)


# procedural clean images

IMAGE_KINDS = ("gradient", "checker", "texture", "shapes")


def _value_noise(rng, h, w, cells):
    grid = rng.uniform(0, 1, size=(cells + 2, cells + 2))
    ys = np.linspace(0, cells, h, endpoint=False)
    xs = np.linspace(0, cells, w, endpoint=False)
    y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
    fy, fx = ys - y0, xs - x0
    fy, fx = fy * fy * (3 - 2 * fy), fx * fx * (3 - 2 * fx)
    a = grid[y0][:, x0]
    b = grid[y0][:, x0 + 1]
    c = grid[y0 + 1][:, x0]
    d = grid[y0 + 1][:, x0 + 1]
    top = a + (b - a) * fx[None]
    bot = c + (d - c) * fx[None]
    return top + (bot - top) * fy[:, None]


def procedural_image(seed: int, size: int = 96, kind: Optional[str] = None) -> np.ndarray:
    """A smooth synthetic scene of shape (1, 3, size, size) in float32."""
    rng = _rng(seed, 0)
    if kind is None:
        kind = IMAGE_KINDS[int(rng.integers(len(IMAGE_KINDS)))]
    h = w = size
    ys, xs = np.mgrid[0:h, 0:w] / size
    img = np.empty((3, h, w))
    if kind == "gradient":
        ang = rng.uniform(0, 2 * math.pi)
        t = (np.cos(ang) * xs + np.sin(ang) * ys)
        c0, c1 = rng.uniform(0.05, 0.7, 3), rng.uniform(0.05, 0.7, 3)
        t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
        img = c0[:, None, None] + (c1 - c0)[:, None, None] * t[None]
    elif kind == "checker":
        period = int(rng.integers(8, 25))
        ang = rng.uniform(0, math.pi)
        u = (np.cos(ang) * xs - np.sin(ang) * ys) * size / period
        v = (np.sin(ang) * xs + np.cos(ang) * ys) * size / period
        mask = (np.floor(u) + np.floor(v)) % 2
        c0, c1 = rng.uniform(0.05, 0.7, 3), rng.uniform(0.05, 0.7, 3)
        img = c0[:, None, None] + (c1 - c0)[:, None, None] * mask[None]
        img = gaussian_filter(img, (0, 0.8, 0.8))
    elif kind == "texture":
        base = sum(_value_noise(rng, h, w, cells) / (i + 1) for i, cells in enumerate((3, 6, 12)))
        base = (base - base.min()) / max(base.max() - base.min(), 1e-9)
        tint = rng.uniform(0.3, 0.8, 3)
        img = 0.05 + tint[:, None, None] * base[None]
    elif kind == "shapes":
        img = np.broadcast_to(rng.uniform(0.05, 0.5, 3)[:, None, None], (3, h, w)).copy()
        for _ in range(int(rng.integers(3, 8))):
            col = rng.uniform(0.05, 0.75, 3)
            cx, cy = rng.uniform(0, 1, 2)
            r = rng.uniform(0.08, 0.3)
            if rng.uniform() < 0.5:
                m = (xs - cx) ** 2 + (ys - cy) ** 2 < r * r
            else:
                m = (np.abs(xs - cx) < r) & (np.abs(ys - cy) < r * rng.uniform(0.4, 1.0))
            img[:, m] = col[:, None]
        img = gaussian_filter(img, (0, 0.7, 0.7))
    else:
        raise ValueError(f"unknown image kind {kind!r}")
    return np.clip(img, 0, 1)[None].astype(np.float32)


# patches

@dataclass
class PatchSampler:
    patch_size: int = 32
    seed: int = 0
    policy: str = "random"
    stride: int = 16
    _rng: np.random.Generator = field(init=False, repr=False)
    _cursor: int = field(init=False, default=0, repr=False)

    def __post_init__(self):
        if self.policy not in ("random", "stride"):
            raise ValueError(f"unknown patch policy {self.policy!r}")
        self._rng = _rng(self.seed, 3)


def _windows(h, w, p, stride):
    return [(t, l) for t in range(0, h - p + 1, stride) for l in range(0, w - p + 1, stride)]


def sample_patches(pairs: Sequence[tuple], sampler: PatchSampler, count: int):
    """Aligned crops from ``(rainy, clean)`` pairs.

    Returns ``(rainy_batch, clean_batch, coords)`` where each coord is
    ``(pair_index, top, left)``. Pairs smaller than the patch are skipped.
    """
    p = sampler.patch_size
    usable = []
    for i, (rainy, clean) in enumerate(pairs):
        if rainy.shape != clean.shape:
            raise DataError(f"pair {i}: rainy {rainy.shape} vs clean {clean.shape}")
        if rainy.shape[-2] < p or rainy.shape[-1] < p:
            log.warning("pair %d (%dx%d) is smaller than the %d px patch; skipped",
                        i, rainy.shape[-2], rainy.shape[-1], p)
            continue
        usable.append(i)
    if not usable:
        raise DataError("no image is large enough for the requested patch size")
    c = pairs[usable[0]][0].shape[1]
    dt = pairs[usable[0]][0].dtype
    rb = np.empty((count, c, p, p), dtype=dt)
    cb = np.empty((count, c, p, p), dtype=dt)
    coords = []
    rng = sampler._rng
    for k in range(count):
        if sampler.policy == "random":
            i = usable[int(rng.integers(len(usable)))]
            h, w = pairs[i][0].shape[-2:]
            top = int(rng.integers(h - p + 1))
            left = int(rng.integers(w - p + 1))
        else:
            flat = [(i, t, l) for i in usable for t, l in _windows(*pairs[i][0].shape[-2:], p, sampler.stride)]
            i, top, left = flat[sampler._cursor % len(flat)]
            sampler._cursor += 1
        rainy, clean = pairs[i]
        rb[k] = rainy[0, :, top:top + p, left:left + p]
        cb[k] = clean[0, :, top:top + p, left:left + p]
        coords.append((i, top, left))
    return rb, cb, coords


# PPM

_WS = b" \t\n\r\x0b\x0c"


def quantize(t: np.ndarray, precision: str = "single") -> np.ndarray:
    """Values exactly as they come back from a write/read round trip."""
    return to_bytes_array(t).astype(dtype_of(precision)) / dtype_of(precision)(255)


def to_bytes_array(t: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _header_token(data: bytes, pos: int):
    while pos < len(data):
        if data[pos] in _WS:
            pos += 1
        elif data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] not in b"\r\n":
                pos += 1
        else:
            break
    start = pos
    while pos < len(data) and data[pos] not in _WS and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("unexpected end of header", start)
    return data[start:pos], start, pos


def decode_ppm(data: bytes, precision: str = "single") -> np.ndarray:
    if data[:2] != b"P6":
        raise ImageFormatError("not a binary PPM (expected magic 'P6')", 0)
    pos = 2
    values = []
    for label in ("width", "height", "maxval"):
        tok, start, pos = _header_token(data, pos)
        if not re.fullmatch(rb"\d+", tok):
            raise ImageFormatError(f"invalid {label} {tok!r}", start)
        values.append((int(tok), start))
    (w, ws), (h, hs), (maxval, ms) = values
    if w < 1:
        raise ImageFormatError("width must be positive", ws)
    if h < 1:
        raise ImageFormatError("height must be positive", hs)
    if maxval != 255:
        raise ImageFormatError(f"only maxval 255 is supported, got {maxval}", ms)
    if pos >= len(data) or data[pos] not in _WS:
        raise ImageFormatError("missing whitespace after maxval", pos)
    pos += 1
    need = w * h * 3
    if len(data) - pos < need:
        raise ImageFormatError(f"truncated pixel data: need {need} bytes, have {len(data) - pos}", len(data))
    px = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(h, w, 3)
    dt = dtype_of(precision)
    return (px.transpose(2, 0, 1)[None].astype(dt) / dt(255))


def encode_ppm(t: np.ndarray) -> bytes:
    t = np.asarray(t)
    if t.ndim == 4:
        if t.shape[0] != 1:
            raise ValueError("write_image expects a single image (batch of 1)")
        t = t[0]
    if t.ndim != 3 or t.shape[0] != 3:
        raise ValueError(f"write_image expects 3 channels, got shape {t.shape}")
    px = to_bytes_array(t).transpose(1, 2, 0)
    h, w = px.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + px.tobytes()


def read_image(path, precision: str = "single") -> np.ndarray:
    return decode_ppm(Path(path).read_bytes(), precision)


def write_image(t: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_ppm(t))


# corpus layout: <root>/clean/NNN.ppm, <root>/rainy/NNN.ppm, <root>/manifest.txt

@dataclass
class ManifestEntry:
    index: int
    seed: int
    mode: str
    streaks: int


def synth_corpus(root, count: int, mode: str = "heavy", seed: int = 0, size: int = 96,
                 noise_sigma: float = 0.0) -> list[ManifestEntry]:
    """Write ``count`` clean/degraded pairs and a manifest.

    With ``noise_sigma > 0`` the degradation is additive Gaussian noise
    instead of rain and the manifest mode reads ``noise``.
    """
    root = Path(root)
    (root / "clean").mkdir(parents=True, exist_ok=True)
    (root / "rainy").mkdir(parents=True, exist_ok=True)
    spec = RainSpec.preset(mode)
    entries = []
    for i in range(count):
        s = derive_seed(seed, i)
        clean = quantize(procedural_image(s, size))
        if noise_sigma > 0:
            degraded, streaks, label = add_gaussian_noise(clean, noise_sigma, s), 0, "noise"
        else:
            degraded, streaks = synthesize_rain(clean, spec.with_seed(s), return_count=True)
            label = mode
        write_image(clean, root / "clean" / f"{i:03d}.ppm")
        write_image(degraded, root / "rainy" / f"{i:03d}.ppm")
        entries.append(ManifestEntry(i, s, label, streaks))
    lines = [f"{e.index}, {e.seed}, {e.mode}, {e.streaks}\n" for e in entries]
    (root / "manifest.txt").write_text("".join(lines))
    return entries


def read_manifest(root) -> list[ManifestEntry]:
    path = Path(root) / "manifest.txt"
    if not path.exists():
        raise DataError(f"no manifest at {path}")
    entries = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise DataError(f"{path}:{n}: expected 4 fields, got {len(parts)}")
        try:
            entries.append(ManifestEntry(int(parts[0]), int(parts[1]), parts[2], int(parts[3])))
        except ValueError:
            raise DataError(f"{path}:{n}: malformed manifest line {line!r}") from None
    return entries


def load_corpus(root, precision: str = "single"):
    """Return ``(pairs, names, missing)``; ``pairs`` holds ``(rainy, clean)`` tensors."""
    root = Path(root)
    pairs, names, missing = [], [], []
    for e in read_manifest(root):
        name = f"{e.index:03d}"
        rp, cp = root / "rainy" / f"{name}.ppm", root / "clean" / f"{name}.ppm"
        if not (rp.exists() and cp.exists()):
            missing.append(name)
            continue
        pairs.append((read_image(rp, precision), read_image(cp, precision)))
        names.append(name)
    return pairs, names, missing


def split_corpus(n: int, train_fraction: float = 0.75) -> tuple[list[int], list[int]]:
    cut = int(math.floor(n * train_fraction))
    return list(range(cut)), list(range(cut, n))
