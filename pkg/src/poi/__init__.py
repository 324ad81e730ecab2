"""Prior-guided objective inference: noise-robust training via AU-prior distillation."""

from .config import AblationFlags, DataSpec, HyperParams, ModelSpec, RunConfig, profile
from .model import Model, load_model, save_checkpoint
from .priors import AUPriorTable, default_table

__all__ = [
    "AblationFlags",
    "AUPriorTable",
    "DataSpec",
    "HyperParams",
    "Model",
    "ModelSpec",
    "RunConfig",
    "default_table",
    "load_model",
    "profile",
    "save_checkpoint",
]

__version__ = "0.1.0"
