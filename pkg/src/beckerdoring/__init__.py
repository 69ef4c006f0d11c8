"""Stochastic Becker-Döring nucleation: closed forms and exact simulation, with statistical checks."""
from .coefficients import RateModel, critical_size, regime, saturation

__version__ = "0.1.0"

__all__ = ["RateModel", "__version__", "critical_size", "regime", "saturation"]
