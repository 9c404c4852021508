"""Numerical laboratory for the nine-component Lorenz (1980) model.

Simulation of the full slow-fast system, moving-average slow/fast
decomposition, small tanh-MLP parameterizations trained offline, online
neural closures of the rotational-flow equation, and the lobe-transition
statistics that separate the regimes.
"""

__version__ = "0.1.0"

from .errors import (BlowUpError, ConfigError, InsufficientDataError,
                     L80Error, NoGravityWavePeakError, TrainingDivergedError)
from .model import ModelParams, load_preset

__all__ = [
    "BlowUpError", "ConfigError", "InsufficientDataError", "L80Error",
    "ModelParams", "NoGravityWavePeakError", "TrainingDivergedError",
    "load_preset", "__version__",
]
