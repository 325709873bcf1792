"""Minimum drawdown probability and optimal investment over the whole domain.

Three regimes in the high-water mark m:

* m >= c/r: closed form (the drawdown level alpha*m is a fixed ruin level);
* m* <= m < c/r: dual solution whose boundaries come from the ODE curve z(m);
* 0 < m < m*: the restricted problem (wealth never exceeds m), closed-form dual.

In the two dual regimes phi(w, m) = f(y) - w*y with f'(y) = w, and
pi*(w, m) = -(mu-r)/sigma^2 * y * f''(y).
"""

from __future__ import annotations

import threading

import numpy as np

from .closed_region import phi_above_safe, phi_above_safe_derivatives, pi_ruin
from .controller_stopper import (
    DualBoundaries,
    DualSolution,
    pi_star_restricted,
    restricted_dual,
    solve_x,
    y_boundaries,
)
from .errors import DomainError
from .free_boundary import DEFAULT_EPS, FreeBoundaryCurve, shoot
from .market import MarketParams, derive_constants

EDGE_RTOL = 1e-12
_CACHE_LIMIT = 20000

CLOSED = "closed"
FREE_BOUNDARY = "free_boundary"
RESTRICTED = "restricted"


class ValueSurface:
    """Evaluator for phi(w, m), pi*(w, m) and the dual variable y(w, m).

    The free-boundary curve is computed once at construction unless one is
    passed in. Instances are read-only afterwards; the per-m cache only
    memoizes deterministic values.
    """

    def __init__(self, params: MarketParams, curve: FreeBoundaryCurve | None = None, eps_list=DEFAULT_EPS,
                 step_control: dict | None = None):
        self.params = params
        self.constants = derive_constants(params)
        self.curve = curve if curve is not None else shoot(self.constants, params, eps_list, step_control)
        self._duals: dict[float, DualSolution] = {}
        self._lock = threading.Lock()

    @property
    def m_star(self) -> float:
        return self.curve.m_star

    @property
    def safe_level(self) -> float:
        return self.constants.safe_level

    def regime(self, m: float) -> str:
        if m >= self.safe_level:
            return CLOSED
        if m >= self.m_star:
            return FREE_BOUNDARY
        return RESTRICTED

    def eta(self, m: float) -> float:
        """Ratio y_m / y_alpha_m: 1/x(m) below m*, z(m) from m* to c/r, 0 beyond."""
        reg = self.regime(m)
        if reg == CLOSED:
            return 0.0
        if reg == FREE_BOUNDARY:
            return float(self.curve.z(m))
        return 1.0 / solve_x(m, self.constants, self.params)

    def dual_boundaries(self, m: float) -> DualBoundaries:
        reg = self.regime(m)
        if reg == CLOSED:
            raise DomainError(f"no dual boundaries for m >= c/r = {self.safe_level}")
        if reg == RESTRICTED:
            return y_boundaries(m, self.constants, self.params)
        z = float(self.curve.z(m))
        ya = float(self.curve.y_alpha_m(m))
        return DualBoundaries(y_m=z * ya, y_alpha_m=ya, x=1.0 / z)

    def dual(self, m: float) -> DualSolution:
        """Dual value function at fixed m (either dual regime)."""
        m = float(m)
        d = self._duals.get(m)
        if d is not None:
            return d
        if self.regime(m) == RESTRICTED:
            d = restricted_dual(m, self.constants, self.params)
        else:
            b = self.dual_boundaries(m)
            d = DualSolution(m, b.y_alpha_m, b.y_m, self.constants, self.params)
        with self._lock:
            if len(self._duals) > _CACHE_LIMIT:
                self._duals.clear()
            self._duals[m] = d
        return d

    # -- evaluation --------------------------------------------------------
    def _check(self, w, m):
        if not m > 0:
            raise DomainError(f"maximum wealth must be positive, got m={m}")
        w = np.asarray(w, dtype=float)
        lo = self.params.alpha * m
        hi = min(m, self.safe_level)
        if np.any(w < lo - EDGE_RTOL * max(lo, 1.0)) or np.any(w > hi * (1 + EDGE_RTOL)):
            raise DomainError(f"wealth outside [alpha*m, min(m, c/r)] = [{lo}, {hi}] at m={m}")
        return np.clip(w, lo, hi)

    def _per_m(self, fn, w, m):
        if np.ndim(m) == 0:
            # scalars go through the array path too, so batching never changes the last bit
            out = np.asarray(fn(np.atleast_1d(self._check(w, float(m))), float(m)))
            return float(out[0]) if np.ndim(w) == 0 else out.reshape(np.shape(w))
        w_b, m_b = np.broadcast_arrays(np.asarray(w, dtype=float), np.asarray(m, dtype=float))
        out = np.empty(w_b.shape)
        for mv in np.unique(m_b):
            sel = m_b == mv
            out[sel] = fn(self._check(w_b[sel], float(mv)), float(mv))
        return out

    def phi(self, w, m):
        """Minimum probability of lifetime drawdown at wealth w and maximum wealth m."""

        def one(w, m):
            if self.regime(m) == CLOSED:
                return phi_above_safe(w, max(m, self.safe_level), self.constants, self.params)
            d = self.dual(m)
            # the curve is launched at z = eps rather than 0; clip the O(eps) undershoot near c/r
            value = np.clip(d.primal_from_dual(d.invert(w)), 0.0, 1.0)
            return np.where(w <= self.params.alpha * m, 1.0, value)

        return self._per_m(one, w, m)

    def invert_dual(self, w, m):
        """Dual variable y with f'(y) = w (equals -phi_w)."""

        def one(w, m):
            if self.regime(m) == CLOSED:
                raise DomainError("the dual variable is only defined for m < c/r")
            return self.dual(m).invert(w)

        return self._per_m(one, w, m)

    def pi_star(self, w, m):
        """Optimal dollar amount in the risky asset."""

        def one(w, m):
            reg = self.regime(m)
            if reg == CLOSED:
                return pi_ruin(w, self.constants, self.params)
            if reg == RESTRICTED:
                return pi_star_restricted(w, m, self.constants, self.params)
            d = self.dual(m)
            return np.maximum(d.strategy_from_dual(d.invert(w)), 0.0)

        return self._per_m(one, w, m)

    def derivatives(self, w, m):
        """Analytic (phi, phi_w, phi_ww) at scalar m; phi_ww is inf where f'' vanishes."""
        w = self._check(w, float(m))
        if self.regime(m) == CLOSED:
            return phi_above_safe_derivatives(w, max(m, self.safe_level), self.constants, self.params)
        d = self.dual(m)
        y = np.asarray(d.invert(w))
        fyy = np.asarray(d.value_yy(y))
        with np.errstate(divide="ignore"):
            phi_ww = np.where(fyy < 0, -1.0 / fyy, np.inf)
        phi = np.asarray(d.primal_from_dual(y))
        if phi.ndim == 0:
            return float(phi), float(-y), float(phi_ww)
        return phi, -y, phi_ww
