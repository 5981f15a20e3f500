"""Fuzzy-rule sequence-to-sequence modelling on a small numpy autodiff core."""
from .errors import ConfigError, ContractError, DimensionError, FormatError, GenFSError, StateError
from .model import FuzzyS2S, TrainConfig, ablate, build, fit

__all__ = [
    "ConfigError", "ContractError", "DimensionError", "FormatError", "GenFSError", "StateError",
    "FuzzyS2S", "TrainConfig", "ablate", "build", "fit",
]
__version__ = "0.1.0"
