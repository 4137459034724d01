"""Small reverse-mode autodiff core and the hourglass network built on it."""

from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint
from .network import VARIANTS, NetConfig, Network, build_network
from .optim import rmsprop_step, step_schedule
from .params import ParamStore
from .tensor import Tensor, profile

__all__ = [
    "NetConfig", "Network", "ParamStore", "Tensor", "VARIANTS", "build_network",
    "load_checkpoint", "profile", "read_checkpoint", "rmsprop_step", "save_checkpoint",
    "step_schedule", "write_checkpoint",
]
