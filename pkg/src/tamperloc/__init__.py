"""tamperloc: image manipulation localization with frequency-aware inputs
and frozen-encoder semantic alignment.

Public surface: the config/model/training entry points plus the building
blocks (frequency decomposition, patch alignment, backbone, decoder,
losses, metrics, synthetic data generation).
"""

from .config import ABLATION_LADDER, RunConfig
from .errors import ConfigError, ValidationError
from .model import ManipulationLocalizer, ModelOutput, build_model, param_hash
from .train import ablate, evaluate, sweep, train

__all__ = [
    "ABLATION_LADDER",
    "ConfigError",
    "ManipulationLocalizer",
    "ModelOutput",
    "RunConfig",
    "ValidationError",
    "ablate",
    "build_model",
    "evaluate",
    "param_hash",
    "sweep",
    "train",
]

__version__ = "0.1.0"
