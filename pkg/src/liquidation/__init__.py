"""Optimal liquidation under temporary and permanent price impact."""
from .impact import ImpactForm, ProblemSpec, foc_optimal_rate, linear, power, quadratic

__version__ = "0.1.0"

__all__ = [
    "ImpactForm",
    "ProblemSpec",
    "linear",
    "quadratic",
    "power",
    "foc_optimal_rate",
    "__version__",
]
