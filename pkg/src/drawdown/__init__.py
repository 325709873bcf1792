"""Minimum probability of lifetime drawdown: value function, optimal investment and checks."""

from .closed_region import phi_above_safe, pi_ruin
from .controller_stopper import m_hat, pi_star_restricted, solve_x
from .errors import ConvergenceError, DomainError, ParameterError, ShootingError, SimulationError
from .free_boundary import FreeBoundaryCurve, shoot
from .market import BASELINE, HIGH_DRIFT, DerivedConstants, MarketParams, derive_constants
from .surface import ValueSurface

__all__ = [
    "BASELINE",
    "HIGH_DRIFT",
    "ConvergenceError",
    "DerivedConstants",
    "DomainError",
    "FreeBoundaryCurve",
    "MarketParams",
    "ParameterError",
    "ShootingError",
    "SimulationError",
    "ValueSurface",
    "derive_constants",
    "m_hat",
    "phi_above_safe",
    "pi_ruin",
    "pi_star_restricted",
    "shoot",
    "solve_x",
]
