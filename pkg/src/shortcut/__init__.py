"""Shortcut models: step-size conditioned flow matching on toy data."""
from .config import RunConfig
from .net import NetConfig, StepGrid, VelocityNet, cfg_combine, embed_time, init_params
from .sampler import SampleRequest, euler_sample, interpolation_sweep, step_sweep
from .training import train

__all__ = [
    "NetConfig",
    "RunConfig",
    "SampleRequest",
    "StepGrid",
    "VelocityNet",
    "cfg_combine",
    "embed_time",
    "euler_sample",
    "init_params",
    "interpolation_sweep",
    "step_sweep",
    "train",
]
__version__ = "0.1.0"
