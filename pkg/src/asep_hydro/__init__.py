"""Open-boundary ASEP with accelerated reservoirs and its Burgers hydrodynamic limit."""
from .core_model import (ConfigError, LatticeConfig, RateSchedule, ScalingPlan, liggett_rates,
                         reservoir_densities, validate_scaling)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "LatticeConfig", "RateSchedule", "ScalingPlan", "liggett_rates",
    "reservoir_densities", "validate_scaling", "__version__",
]
