"""Recursive residual deraining with deep supervision, on a small autodiff engine."""

from .autograd import Variable, backward, grad_check
from .config import RunConfig, load_config, parse_config
from .model import ModelConfig, ResGuideModel, forward, infer, load, save

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "ResGuideModel",
    "RunConfig",
    "Variable",
    "backward",
    "forward",
    "grad_check",
    "infer",
    "load",
    "load_config",
    "parse_config",
    "save",
]
