"""Dual (controller-stopper) machinery for the regime where the maximum never grows.

For 0 < m < c/r the dual value function solves

    delta*y^2 f'' - (r - lam)*y f' - lam*f + c*y = 0

between two free boundaries y_m(m) < y_alpha_m(m), with smooth fit to the
stopping payoff 1 + alpha*m*y above y_alpha_m and reflection (f' = m,
f'' = 0) at y_m. The general solution is D1*y^B1 + D2*y^B2 + (c/r)*y; once the
upper boundary is known the coefficients follow from the two conditions there.
``DualSolution`` holds that solution for a single m and is also used by the
free-boundary regime, where y_alpha_m comes from the ODE curve instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceError, DomainError
from .market import DerivedConstants, MarketParams, risk_loading

EDGE_RTOL = 1e-12
_BISECTION_STEPS = 64
_MAX_DOUBLINGS = 1100


@dataclass(frozen=True)
class DualBoundaries:
    """Free boundaries of the dual problem at one value of m; y_alpha_m = x * y_m."""

    y_m: float
    y_alpha_m: float
    x: float


def _scalar_or_array(out):
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# x(m) and the critical level m_hat


def x_equation_sum(x, k: DerivedConstants):
    """(1-B2)/(B1-B2) x^(B1-1) + (B1-1)/(B1-B2) x^(B2-1); equals 1 with zero slope at x = 1."""
    b1, b2 = k.b1, k.b2
    return ((1 - b2) * x ** (b1 - 1) + (b1 - 1) * x ** (b2 - 1)) / (b1 - b2)


@lru_cache(maxsize=8192)
def solve_x(m: float, k: DerivedConstants, p: MarketParams) -> float:
    """Ratio of the two dual boundaries in the restricted problem.

    Solves (c/r - m) * S(x) = c/r - alpha*m for x >= 1, where S is
    ``x_equation_sum``. The left side increases in x, so the root is bracketed
    by [1, x_hi] with x_hi doubled until the sign changes.
    """
    safe = k.safe_level
    if not 0 <= m < safe:
        raise DomainError(f"x(m) is defined for 0 <= m < c/r = {safe}, got m={m}")
    target = (safe - p.alpha * m) / (safe - m)
    if target <= 1.0:
        return 1.0

    def resid(x):
        return x_equation_sum(x, k) - target

    hi = 2.0
    for _ in range(_MAX_DOUBLINGS):
        if resid(hi) >= 0:
            break
        hi *= 2.0
    else:
        raise ConvergenceError(f"could not bracket x(m) at m={m}")
    return brentq(resid, 1.0, hi, xtol=1e-300, rtol=8.9e-16, maxiter=500)


def _mhat_g(m, k: DerivedConstants, p: MarketParams):
    a, safe = p.alpha, k.safe_level
    t = safe * (1 - a) / (safe - m)
    return (a * k.b1 + t) ** (1 / (k.b1 - 1)) - (a * k.b2 + t) ** (-1 / (1 - k.b2))


def m_hat_bracket(k: DerivedConstants, p: MarketParams) -> tuple[float, float]:
    safe = k.safe_level
    lo = max(0.0, safe * (1 + (1 - p.alpha) / (p.alpha * k.b2)))
    return lo + 1e-9 * safe, safe * (1 - 1e-12)


@lru_cache(maxsize=64)
def m_hat(k: DerivedConstants, p: MarketParams) -> float:
    """High-water mark above which the restricted dual boundary exceeds lam/(c(1-alpha)).

    For alpha = 0 the level degenerates to 0.
    """
    if p.alpha == 0:
        return 0.0
    lo, hi = m_hat_bracket(k, p)
    glo, ghi = _mhat_g(lo, k, p), _mhat_g(hi, k, p)
    if not (glo < 0 < ghi):
        raise ConvergenceError(f"m_hat bracket does not change sign: g({lo})={glo}, g({hi})={ghi}")
    return brentq(lambda m: _mhat_g(m, k, p), lo, hi, xtol=1e-14 * k.safe_level, rtol=8.9e-16)


def mhat_residual(m: float, k: DerivedConstants, p: MarketParams) -> float:
    """Relative residual of the defining equation of m_hat."""
    a, safe = p.alpha, k.safe_level
    t = safe * (1 - a) / (safe - m)
    left = (a * k.b1 + t) ** (1 / (k.b1 - 1))
    return (left - (a * k.b2 + t) ** (-1 / (1 - k.b2))) / left


# ---------------------------------------------------------------------------
# Dual value function at fixed m


class DualSolution:
    """f(y) = (c/r) y - A v^B1 + C v^B2 with v = y / y_alpha on [y_low, y_alpha].

    A and C are fixed by f(y_alpha) = 1 + alpha*m*y_alpha and
    f'(y_alpha) = alpha*m. The primal value, the optimal dollar investment, and
    the dual inversion w -> y all reduce to two power terms in v.
    """

    def __init__(self, m: float, y_alpha: float, y_low: float, k: DerivedConstants, p: MarketParams):
        if not (0 < y_low <= y_alpha):
            raise DomainError(f"need 0 < y_low <= y_alpha, got {y_low}, {y_alpha}")
        self.m = float(m)
        self.y_alpha = float(y_alpha)
        self.y_low = float(y_low)
        self.k = k
        self.p = p
        b1, b2 = k.b1, k.b2
        span = (k.safe_level - p.alpha * m) * y_alpha
        self.A = (b2 + span * (1 - b2)) / (b1 - b2)
        self.C = (b1 - span * (b1 - 1)) / (b1 - b2)
        self.v_low = y_low / y_alpha
        self._log_v_low = math.log(self.v_low)

    # dual side -----------------------------------------------------------
    def _v(self, y):
        y = np.asarray(y, dtype=float)
        lo, hi = self.y_low, self.y_alpha
        tol = EDGE_RTOL * hi
        if np.any(y < lo - tol) or np.any(y > hi + tol):
            raise DomainError(f"dual variable outside [{lo}, {hi}] at m={self.m}")
        return np.clip(y, lo, hi) / hi

    def value(self, y):
        v = self._v(y)
        k = self.k
        out = k.safe_level * v * self.y_alpha - self.A * v**k.b1 + self.C * v**k.b2
        return _scalar_or_array(out)

    def value_y(self, y):
        v = self._v(y)
        k = self.k
        out = k.safe_level - (self.A * k.b1 * v ** (k.b1 - 1) - self.C * k.b2 * v ** (k.b2 - 1)) / self.y_alpha
        return _scalar_or_array(out)

    def value_yy(self, y):
        v = self._v(y)
        k = self.k
        b1, b2 = k.b1, k.b2
        out = (-self.A * b1 * (b1 - 1) * v ** (b1 - 2) + self.C * b2 * (b2 - 1) * v ** (b2 - 2)) / self.y_alpha**2
        return _scalar_or_array(out)

    # primal side ---------------------------------------------------------
    def _gap(self, v):
        # c/r - f'(y) as a function of v; increasing in v
        k = self.k
        return (self.A * k.b1 * v ** (k.b1 - 1) - self.C * k.b2 * v ** (k.b2 - 1)) / self.y_alpha

    def invert(self, w):
        """Dual variable y with f'(y) = w, for alpha*m <= w <= m (vectorized bisection in log v)."""
        w = np.asarray(w, dtype=float)
        m, am = self.m, self.p.alpha * self.m
        if np.any(w < am - EDGE_RTOL * max(am, 1.0)) or np.any(w > m * (1 + EDGE_RTOL)):
            raise DomainError(f"wealth outside [alpha*m, m] = [{am}, {m}]")
        w = np.clip(w, am, m)
        target = self.k.safe_level - w
        lo = np.full(w.shape, self._log_v_low)
        hi = np.zeros(w.shape)
        for _ in range(_BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            up = self._gap(np.exp(mid)) < target
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
        # endpoint ties resolve to the endpoint
        y = np.exp(0.5 * (lo + hi)) * self.y_alpha
        y = np.where(w >= m, self.y_low, np.where(w <= am, self.y_alpha, y))
        return _scalar_or_array(y)

    def primal_from_dual(self, y):
        """f(y) - y f'(y): the Legendre-dual value at the wealth matched to y."""
        v = self._v(y)
        k = self.k
        out = self.A * (k.b1 - 1) * v**k.b1 + self.C * (1 - k.b2) * v**k.b2
        return _scalar_or_array(out)

    def strategy_from_dual(self, y):
        """-(mu-r)/sigma^2 * y * f''(y), written without cancellation."""
        v = self._v(y)
        k = self.k
        b1, b2 = k.b1, k.b2
        out = risk_loading(self.p) * (
            self.A * b1 * (b1 - 1) * v ** (b1 - 1) - self.C * b2 * (b2 - 1) * v ** (b2 - 1)
        ) / self.y_alpha
        return _scalar_or_array(out)

    def primal(self, w):
        return self.primal_from_dual(self.invert(w))

    def strategy(self, w):
        return self.strategy_from_dual(self.invert(w))


# ---------------------------------------------------------------------------
# Restricted problem: closed-form boundaries


def y_alpha_hat(m: float, k: DerivedConstants, p: MarketParams) -> float:
    """Upper dual boundary of the restricted problem.

    Uses 1/y = (c/r - m) (B1-1)(1-B2)/(B1-B2) (x^(B1-1)/B1 - x^(B2-1)/B2), a sum
    of positive terms, obtained by eliminating c/r - alpha*m with the x-equation.
    """
    x = solve_x(m, k, p)
    b1, b2 = k.b1, k.b2
    inv = (k.safe_level - m) * (b1 - 1) * (1 - b2) / (b1 - b2) * (x ** (b1 - 1) / b1 - x ** (b2 - 1) / b2)
    return 1.0 / inv


@lru_cache(maxsize=8192)
def y_boundaries(m: float, k: DerivedConstants, p: MarketParams) -> DualBoundaries:
    if not 0 < m < k.safe_level:
        raise DomainError(f"restricted boundaries need 0 < m < c/r = {k.safe_level}, got m={m}")
    x = solve_x(m, k, p)
    ya = y_alpha_hat(m, k, p)
    return DualBoundaries(y_m=ya / x, y_alpha_m=ya, x=x)


@lru_cache(maxsize=8192)
def restricted_dual(m: float, k: DerivedConstants, p: MarketParams) -> DualSolution:
    b = y_boundaries(m, k, p)
    return DualSolution(m, b.y_alpha_m, b.y_m, k, p)


def phi_hat(y, m, k: DerivedConstants, p: MarketParams):
    """Controller-stopper value on [y_m(m), y_alpha_m(m)]."""
    return restricted_dual(m, k, p).value(y)


def phi_hat_y(y, m, k: DerivedConstants, p: MarketParams):
    return restricted_dual(m, k, p).value_y(y)


def phi_hat_yy(y, m, k: DerivedConstants, p: MarketParams):
    return restricted_dual(m, k, p).value_yy(y)


def phi_hat_extended(y, m, k: DerivedConstants, p: MarketParams):
    """Controller-stopper value on all of y > 0.

    Above y_alpha_m the stopper quits at once (1 + alpha*m*y); below y_m the
    controller pushes the state up to y_m at unit cost m.
    """
    d = restricted_dual(m, k, p)
    y = np.asarray(y, dtype=float)
    inner = np.clip(y, d.y_low, d.y_alpha)
    out = np.where(
        y >= d.y_alpha,
        1 + p.alpha * m * y,
        np.where(y <= d.y_low, d.value(d.y_low) - m * (d.y_low - y), d.value(inner)),
    )
    return _scalar_or_array(out)


def dual_argmax(w, m, k: DerivedConstants, p: MarketParams):
    """Maximizer y* of phi_hat(y, m) - w*y, i.e. the root of phi_hat_y(y, m) = w."""
    return restricted_dual(m, k, p).invert(w)


def Phi(w, m, k: DerivedConstants, p: MarketParams):
    """Minimum drawdown probability when wealth may never exceed its current maximum m."""
    return restricted_dual(m, k, p).primal(w)


def pi_star_restricted(w, m, k: DerivedConstants, p: MarketParams):
    """Optimal dollar investment in the restricted problem; zero at w = m.

    Evaluated as (mu-r)/sigma^2 (c/r - m) (B1-1)(1-B2)/(B1-B2) (u^(B1-1) - u^(B2-1))
    with u = y*/y_m, which vanishes exactly at the reflecting boundary.
    """
    d = restricted_dual(m, k, p)
    y = d.invert(w)
    u = np.asarray(y) / d.y_low
    b1, b2 = k.b1, k.b2
    out = risk_loading(p) * (k.safe_level - m) * (b1 - 1) * (1 - b2) / (b1 - b2) * (u ** (b1 - 1) - u ** (b2 - 1))
    return _scalar_or_array(np.maximum(out, 0.0))
