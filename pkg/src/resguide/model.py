"""The cascaded residual-guided deraining network.

Block k reads the previous reconstruction together with every earlier
residual (when guidance is on), runs a shared two-convolution recursive unit
T times with a skip from the first feature map, and emits a signed residual.
Every reconstruction adds its residual to the original rainy input. A 1x1
convolution fuses all M residuals into the merged output.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .autograd import ContractError, Variable, as_variable
from .ops import ConvParams, concat, conv2d, leaky_relu, residual_add
from .optim import xavier_init
from .tensor import dtype_of

MAGIC = b"RGN1"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class ModelConfig:
    blocks: int = 5
    features: int = 16
    recursions: int = 5
    kernel: int = 3
    slope: float = 0.2
    guidance: bool = True
    recursion_skip: bool = True
    channels: int = 3

    def __post_init__(self):
        for name in ("blocks", "features", "recursions", "channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.kernel not in (1, 3):
            raise ValueError("kernel must be 1 or 3")
        if not 0 < self.slope < 1:
            raise ValueError("slope must lie in (0, 1)")
        # stored as a 32-bit float on disk; keep the in-memory value identical
        object.__setattr__(self, "slope", float(np.float32(self.slope)))

    def block_in_channels(self, k: int) -> int:
        """Input channels of block ``k`` (1-based)."""
        return self.channels * k if self.guidance else self.channels


@dataclass
class Block:
    feat: ConvParams
    recur_a: ConvParams
    recur_b: ConvParams
    out: ConvParams

    def convs(self) -> list[ConvParams]:
        return [self.feat, self.recur_a, self.recur_b, self.out]

    def variables(self) -> list[Variable]:
        return [v for c in self.convs() for v in c.variables()]

    @property
    def count(self) -> int:
        return sum(c.count for c in self.convs())


@dataclass
class ForwardResult:
    residuals: list[Variable]
    reconstructions: list[Variable]
    merged: Optional[Variable] = None


@dataclass
class ResGuideModel:
    config: ModelConfig
    blocks: list[Block]
    merge: ConvParams
    precision: str = "single"

    @classmethod
    def zeros(cls, config: ModelConfig = ModelConfig(), precision: str = "single") -> "ResGuideModel":
        dt = dtype_of(precision)
        f, c, ks = config.features, config.channels, config.kernel
        blocks = []
        for k in range(1, config.blocks + 1):
            blocks.append(Block(
                ConvParams.zeros(config.block_in_channels(k), f, ks, dt, f"block{k}.feat"),
                ConvParams.zeros(f, f, ks, dt, f"block{k}.recur_a"),
                ConvParams.zeros(f, f, ks, dt, f"block{k}.recur_b"),
                ConvParams.zeros(f, c, ks, dt, f"block{k}.out"),
            ))
        merge = ConvParams.zeros(c * config.blocks, c, 1, dt, "merge")
        return cls(config, blocks, merge, precision)

    @classmethod
    def initialized(cls, config: ModelConfig = ModelConfig(), seed: int = 0,
                    precision: str = "single") -> "ResGuideModel":
        model = cls.zeros(config, precision)
        rng = np.random.default_rng(seed)
        for conv in model.convs():
            xavier_init(conv, rng)
        return model

    def convs(self) -> list[ConvParams]:
        return [c for b in self.blocks for c in b.convs()] + [self.merge]

    def variables(self) -> list[Variable]:
        """All learnable arrays in serialisation order."""
        return [v for c in self.convs() for v in c.variables()]

    def astype(self, precision: str) -> "ResGuideModel":
        other = ResGuideModel.zeros(self.config, precision)
        for dst, src in zip(other.variables(), self.variables()):
            dst.value[...] = src.value
        return other

    def copy(self) -> "ResGuideModel":
        return self.astype(self.precision)


def block_forward(x_in, blk: Block, cfg: ModelConfig) -> Variable:
    x_in = as_variable(x_in)
    s = cfg.slope
    x0 = leaky_relu(conv2d(x_in, blk.feat), s)
    x = x0
    for _ in range(cfg.recursions):
        u = leaky_relu(conv2d(x, blk.recur_a), s)
        v = leaky_relu(conv2d(u, blk.recur_b), s)
        x = residual_add(v, x0) if cfg.recursion_skip else v
    return conv2d(x, blk.out)


def forward(X, model: ResGuideModel, k_max: Optional[int] = None) -> ForwardResult:
    """Run blocks 1..k_max; the merged output exists only when all blocks run."""
    cfg = model.config
    if k_max is None:
        k_max = cfg.blocks
    if not 1 <= k_max <= cfg.blocks:
        raise ContractError(f"k_max must lie in [1, {cfg.blocks}], got {k_max}")
    X = as_variable(X)
    if X.value.ndim != 4 or X.shape[1] != cfg.channels:
        raise ContractError(f"input must have shape (n, {cfg.channels}, h, w), got {X.shape}")
    residuals, recons = [], []
    prev = X
    for k in range(1, k_max + 1):
        if cfg.guidance and residuals:
            inp = concat([prev, *reversed(residuals)])
        else:
            inp = prev
        r = block_forward(inp, model.blocks[k - 1], cfg)
        residuals.append(r)
        prev = residual_add(X, r)
        recons.append(prev)
    merged = None
    if k_max == cfg.blocks:
        merged = residual_add(X, conv2d(concat(residuals), model.merge))
    return ForwardResult(residuals, recons, merged)


def infer(model: ResGuideModel, image: np.ndarray, k_max: Optional[int] = None) -> dict:
    """Clamped outputs for inference: ``{"blocks": [...], "merged": array or None}``."""
    x = np.asarray(image, dtype=dtype_of(model.precision))
    res = forward(Variable(x), model, k_max)
    out = {"blocks": [np.clip(r.value, 0, 1) for r in res.reconstructions], "merged": None}
    if res.merged is not None:
        out["merged"] = np.clip(res.merged.value, 0, 1)
    return out


def param_count(model: ResGuideModel, k_max: Optional[int] = None, merge: Optional[bool] = None) -> int:
    k_max = model.config.blocks if k_max is None else k_max
    merge = k_max == model.config.blocks if merge is None else merge
    total = sum(b.count for b in model.blocks[:k_max])
    return total + (model.merge.count if merge else 0)


def block_count_analytic(cfg: ModelConfig, k: int) -> int:
    f, c, q = cfg.features, cfg.channels, cfg.kernel ** 2
    cin = cfg.block_in_channels(k)
    return (q * cin * f + f) + 2 * (q * f * f + f) + (q * f * c + c)


def merge_count_analytic(cfg: ModelConfig) -> int:
    return cfg.channels * cfg.blocks * cfg.channels + cfg.channels


def param_count_analytic(cfg: ModelConfig, k_max: Optional[int] = None, merge: Optional[bool] = None) -> int:
    k_max = cfg.blocks if k_max is None else k_max
    merge = k_max == cfg.blocks if merge is None else merge
    total = sum(block_count_analytic(cfg, k) for k in range(1, k_max + 1))
    return total + (merge_count_analytic(cfg) if merge else 0)


# serialisation

_HEADER = struct.Struct("<4sI5IfII")


def to_bytes(model: ResGuideModel) -> bytes:
    c = model.config
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, c.blocks, c.features, c.recursions, c.channels,
                        c.kernel, c.slope, int(c.guidance), int(c.recursion_skip))
    body = b"".join(v.value.astype("<f4").tobytes() for v in model.variables())
    return head + body


def from_bytes(data: bytes) -> ResGuideModel:
    if len(data) < 4 or data[:4] != MAGIC:
        raise ModelFormatError("bad magic, expected b'RGN1'", 0)
    if len(data) < _HEADER.size:
        raise ModelFormatError("truncated header", len(data))
    (_, version, m, f, t, c, k, slope, guidance, skip) = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}", 4)
    if guidance > 1 or skip > 1:
        raise ModelFormatError("flag fields must be 0 or 1", 32)
    if m > 4096 or f > 4096 or c > 4096:
        raise ModelFormatError("config extents out of range", 8)
    try:
        cfg = ModelConfig(m, f, t, k, float(slope), bool(guidance), bool(skip), c)
    except ValueError as exc:
        raise ModelFormatError(f"invalid config: {exc}", 8) from None
    expected = _HEADER.size + 4 * param_count_analytic(cfg)
    if len(data) < expected:
        raise ModelFormatError(f"truncated parameters: need {expected} bytes, have {len(data)}", len(data))
    model = ResGuideModel.zeros(cfg, "single")
    offset = _HEADER.size
    for v in model.variables():
        nbytes = 4 * v.value.size
        if offset + nbytes > len(data):
            raise ModelFormatError(f"truncated parameter {v.name}", offset)
        v.value[...] = np.frombuffer(data, dtype="<f4", count=v.value.size, offset=offset).reshape(v.shape)
        offset += nbytes
    if offset != len(data):
        raise ModelFormatError(f"{len(data) - offset} trailing bytes after parameters", offset)
    return model


def atomic_write(path, data: bytes) -> None:
    """Write to a temporary sibling and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(model: ResGuideModel, path) -> None:
    atomic_write(path, to_bytes(model))


def load(path) -> ResGuideModel:
    return from_bytes(Path(path).read_bytes())
