"""Score-corrected Kalman filtering for scalar linear systems with non-Gaussian noise."""

from .noise_models import NoiseModel, Family, fisher_information, check_dissipativity
from .state_space import SystemParams, Trajectory, simulate, stationary_var_x

__version__ = "0.1.0"

__all__ = [
    "NoiseModel",
    "Family",
    "fisher_information",
    "check_dissipativity",
    "SystemParams",
    "Trajectory",
    "simulate",
    "stationary_var_x",
    "__version__",
]
