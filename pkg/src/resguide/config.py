"""Flat ``key = value`` run configuration."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .losses import LossConfig
from .metrics import SsimConfig, WINDOWS
from .model import ModelConfig
from .optim import LRSchedule


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # architecture
    blocks: int = 5
    features: int = 16
    recursions: int = 5
    kernel: int = 3
    slope: float = 0.2
    guidance: bool = True
    recursion_skip: bool = True
    channels: int = 3
    # loss
    lam: float = 1.0
    epsilon: float = 1e-4
    ssim_window: str = "gaussian-11-sigma-1.5"
    # optimiser
    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-8
    decay_milestones: tuple = ()
    decay_factor: float = 0.1
    # data
    data: str = ""
    rain_mode: str = "heavy"
    noise_sigma: float = 0.0
    train_fraction: float = 0.75
    # schedule
    iterations: int = 2000
    batch_size: int = 4
    patch_size: int = 32
    eval_every: int = 0
    checkpoint_every: int = 500
    seed: int = 0
    precision: str = "single"

    def __post_init__(self):
        if self.ssim_window not in WINDOWS:
            raise ConfigError(f"ssim_window must be one of {WINDOWS}")
        if self.rain_mode not in ("heavy", "light"):
            raise ConfigError("rain_mode must be heavy or light")
        if self.precision not in ("single", "double"):
            raise ConfigError("precision must be single or double")
        for name in ("iterations", "eval_every", "checkpoint_every", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.batch_size < 1 or self.patch_size < 1:
            raise ConfigError("batch_size and patch_size must be >= 1")
        if not 0 < self.train_fraction <= 1:
            raise ConfigError("train_fraction must lie in (0, 1]")
        try:
            self.model_config()
            self.loss_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.blocks, self.features, self.recursions, self.kernel, self.slope,
                           self.guidance, self.recursion_skip, self.channels)

    def loss_config(self) -> LossConfig:
        return LossConfig(self.lam, self.epsilon, SsimConfig(self.ssim_window))

    def schedule(self) -> LRSchedule:
        return LRSchedule(self.lr, tuple(self.decay_milestones), self.decay_factor)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            key = "lambda" if f.name == "lam" else f.name
            lines.append(f"{key} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


# ``lambda`` is the documented key; ``lam`` is accepted as its Python spelling.
_ALIASES = {"lambda": "lam"}


def _format(v) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _parse_bool(text: str) -> bool:
    t = text.lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(kind, text: str):
    if kind is bool:
        return _parse_bool(text)
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind is tuple:
        return tuple(int(x) for x in text.split(",") if x.strip())
    return text


_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key] = val
    for key, val in (overrides or {}).items():
        values[key] = _format(val)
    kwargs = {}
    for key, val in values.items():
        name = _ALIASES.get(key, key)
        if name not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            kwargs[name] = _convert(_TYPES[name], val)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {val!r}") from None
    return RunConfig(**kwargs)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides)
