"""Optimal interest-rate curves for lending pools.

Exact solutions under linear intensities (:mod:`lendrate.hjb`), policy
search on a differentiable simulator (:mod:`lendrate.optimize`), intensity
calibration from pool histories (:mod:`lendrate.calibrate`) and PnL
reporting (:mod:`lendrate.report`).
"""

__version__ = "0.1.0"

from .core import (
    BPS,
    CalibrationError,
    ConfigurationError,
    ConvergenceError,
    DivergenceError,
    DomainError,
    LendrateError,
    RateSurface,
    RiskParams,
    ShapeError,
    TimeGrid,
    TrainingError,
    UtilizationGrid,
    ValueSurface,
    build_grids,
    terminal_penalty,
)
from .intensity import LinearIntensity, PiecewiseIntensity, equilibrium_rate, eval_linear, eval_piecewise

__all__ = [
    "BPS",
    "CalibrationError",
    "ConfigurationError",
    "ConvergenceError",
    "DivergenceError",
    "DomainError",
    "LendrateError",
    "LinearIntensity",
    "PiecewiseIntensity",
    "RateSurface",
    "RiskParams",
    "ShapeError",
    "TimeGrid",
    "TrainingError",
    "UtilizationGrid",
    "ValueSurface",
    "build_grids",
    "equilibrium_rate",
    "eval_linear",
    "eval_piecewise",
    "terminal_penalty",
]
