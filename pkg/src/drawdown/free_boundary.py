"""Free-boundary curve z(m) = y_m(m) / y_alpha_m(m) for m* <= m < c/r.

z solves the singular first-order ODE dz/dm = G(m, z) / H(m, z) with
G = g1(z) u + g0(z), H = h2(z) u^2 + h1(z) u + h0(z), u = c/r - m, and terminal
value z(c/r) = 0. The solution lives in

    D0 = {(m, z): 0 <= m <= c/r, 1/x(m) <= z <= 1}

and is traced backward from the right edge until it hits the curve
z = 1/x(m); the m-value of that hit is the critical high-water mark m*.

H vanishes on z = 1/x(m), so near that curve the reciprocal (Abel) form
dm/dz = H/G is integrated instead. Two points of D0 are singular: (c/r, 0)
and (m_hat, 1/x(m_hat)), where the curve z = 1/x(m) meets the zero set of G.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .controller_stopper import m_hat, solve_x, y_boundaries
from .errors import ConvergenceError, DomainError, FormSwitch, ShootingError
from .market import DerivedConstants, MarketParams

FORM_SWITCH_TOL = 1e-14
SLOPE_LIMIT = 1e3
HYSTERESIS = 2.0
GUARD_RADIUS = 1e-3
DEFAULT_EPS = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7)
EPS_AGREEMENT = 1e-4  # times c/r

REGION_TAGS = ("interior", "upper", "lower", "right", "left", "singular", "outside")


# ---------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True)
class OdeCoefficients:
    """The five z-dependent coefficient functions of the free-boundary ODE."""

    k: DerivedConstants
    p: MarketParams

    def __call__(self, z):
        """Return (g0, g1, h0, h1, h2) at z (scalar or array)."""
        b1, b2 = self.k.b1, self.k.b2
        a, safe = self.p.alpha, self.k.safe_level
        z = np.asarray(z, dtype=float)
        # trial steps of the integrator may probe z <= 0; the resulting nan/inf rejects the step
        with np.errstate(all="ignore"):
            z1 = z ** (b1 - 1)
            z2 = z ** (b2 - 1)
            zs = z ** (b1 + b2 - 2)
            spread = z**b2 - z**b1
            lin = (b2 - 1) * z1 - (b1 - 1) * z2
            mix = b1 - b2 + a * (b2 - 1) * z1 - a * (b1 - 1) * z2
            g0 = (1 - a) * safe * spread * lin
            g1 = spread * (mix + a * (b1 - 1) * (b2 - 1) * (z1 - z2))
            h0 = -((1 - a) * safe) ** 2 * (b1 - b2) * zs * lin
            h1 = (1 - a) * safe * (lin * ((b1 - 1) * z1 - (b2 - 1) * z2 - a * (b1 - b2) * zs) - (b1 - b2) * zs * mix)
            h2 = ((b1 - 1) * z1 - (b2 - 1) * z2 - a * (b1 - b2) * zs) * mix
        return g0, g1, h0, h1, h2

    def numerator(self, m, z):
        g0, g1, _, _, _ = self(z)
        return g1 * (self.k.safe_level - m) + g0

    def denominator(self, m, z):
        _, _, h0, h1, h2 = self(z)
        u = self.k.safe_level - m
        return (h2 * u + h1) * u + h0

    def both(self, m, z):
        """Return (G, H, scale_G, scale_H); the scales are sums of term magnitudes."""
        g0, g1, h0, h1, h2 = self(z)
        u = self.k.safe_level - m
        big_g = g1 * u + g0
        big_h = (h2 * u + h1) * u + h0
        scale_g = abs(g1 * u) + abs(g0)
        scale_h = abs(h2 * u * u) + abs(h1 * u) + abs(h0)
        return big_g, big_h, scale_g, scale_h

    def xi(self, z):
        """m-value where the numerator G vanishes at height z."""
        g0, g1, _, _, _ = self(z)
        return g0 / g1 + self.k.safe_level


def ode_rhs(m, z, k: DerivedConstants, p: MarketParams) -> float:
    """dz/dm; raises FormSwitch where the denominator is numerically zero."""
    big_g, big_h, _, scale_h = OdeCoefficients(k, p).both(m, z)
    if abs(big_h) <= FORM_SWITCH_TOL * scale_h:
        raise FormSwitch(f"denominator vanishes at (m={m}, z={z}); use the Abel form")
    return float(big_g / big_h)


def abel_rhs(z, m, k: DerivedConstants, p: MarketParams) -> float:
    """dm/dz; raises FormSwitch where the numerator is numerically zero."""
    big_g, big_h, scale_g, _ = OdeCoefficients(k, p).both(m, z)
    if abs(big_g) <= FORM_SWITCH_TOL * scale_g:
        raise FormSwitch(f"numerator vanishes at (m={m}, z={z}); use the z-form")
    return float(big_h / big_g)


def crossing_function(m, z, k: DerivedConstants, p: MarketParams):
    """Negative inside D0, zero on z = 1/x(m), positive below it.

    Equal to z^(B1-1) * ((c/r - m) S(1/z) - (c/r - alpha m)) with S the
    x-equation sum; bounded near (c/r, 0), unlike z - 1/x(m).
    """
    b1, b2 = k.b1, k.b2
    safe = k.safe_level
    z = np.maximum(z, 0.0)
    return (safe - m) * ((1 - b2) + (b1 - 1) * z ** (b1 - b2)) / (b1 - b2) - (safe - p.alpha * m) * z ** (b1 - 1)


def lower_curve(m, k: DerivedConstants, p: MarketParams) -> float:
    """1/x(m), the lower edge of D0 (0 at m = c/r)."""
    if m >= k.safe_level:
        return 0.0
    return 1.0 / solve_x(m, k, p)


# ---------------------------------------------------------------------------
# domain


@dataclass(frozen=True)
class DomainD0:
    k: DerivedConstants
    p: MarketParams
    guard_radius: float = GUARD_RADIUS

    @property
    def m_hat(self) -> float:
        return m_hat(self.k, self.p)

    def x_curve(self, m) -> float:
        return lower_curve(m, self.k, self.p)

    def singular_points(self) -> tuple[tuple[float, float], tuple[float, float]]:
        mh = self.m_hat
        return (mh, self.x_curve(mh)), (self.k.safe_level, 0.0)

    def distance_to_singular(self, m, z) -> float:
        """Distance in (m / (c/r), z) coordinates to the nearer singular point."""
        safe = self.k.safe_level
        return min(math.hypot((m - sm) / safe, z - sz) for sm, sz in self.singular_points())

    def contains(self, m, z) -> bool:
        return 0 <= m <= self.k.safe_level and self.x_curve(m) <= z <= 1

    def classify(self, m, z, tol: float = 1e-10) -> tuple[str, int]:
        """Region tag and the sign of F = H/G (0 where undefined)."""
        k, p = self.k, self.p
        safe = k.safe_level
        if self.distance_to_singular(m, z) <= self.guard_radius:
            return "singular", 0
        if m < -tol * safe or m > safe * (1 + tol) or z < -tol or z > 1 + tol:
            return "outside", 0
        q = crossing_function(min(m, safe), z, k, p)
        scale = safe
        if q > tol * scale:
            return "outside", 0
        big_g, big_h, _, _ = OdeCoefficients(k, p).both(m, z)
        sign = int(np.sign(big_h) * np.sign(big_g)) if big_g != 0 else 0
        if abs(q) <= tol * scale:
            tag = "lower" if m > self.m_hat else "left"
        elif abs(m - safe) <= tol * safe:
            tag = "right"
        elif abs(z - 1) <= tol:
            tag = "upper"
        else:
            tag = "interior"
        return tag, sign


def classify(m, z, k: DerivedConstants, p: MarketParams) -> tuple[str, int]:
    return DomainD0(k, p).classify(m, z)


# ---------------------------------------------------------------------------
# curve object


@dataclass
class _Segment:
    form: str  # "z" (m independent) or "abel" (z independent)
    m_lo: float
    m_hi: float
    sol: Callable
    z_range: tuple[float, float] = (0.0, 0.0)

    def z_at(self, m: float) -> float:
        if self.form == "z":
            return float(self.sol(m)[0])
        za, zb = self.z_range
        return brentq(lambda z: float(self.sol(z)[0]) - m, min(za, zb), max(za, zb), xtol=1e-15, rtol=8.9e-16)


@dataclass
class FreeBoundaryCurve:
    """z(m) on [m*, c/r] together with the dual boundaries it determines."""

    k: DerivedConstants
    p: MarketParams
    nodes: np.ndarray  # (n, 2) array of (m, z), m increasing
    m_star: float
    segments: list = field(default_factory=list, repr=False)
    eps_estimates: dict = field(default_factory=dict)
    m_star_extrapolated: float | None = None

    def z(self, m):
        """z(m) from the integrator's dense output; z(c/r) = 0."""
        m_arr = np.atleast_1d(np.asarray(m, dtype=float))
        out = np.empty_like(m_arr)
        safe = self.k.safe_level
        for i, mi in enumerate(m_arr):
            if mi < self.m_star * (1 - 1e-12) - 1e-300 or mi > safe * (1 + 1e-12):
                raise DomainError(f"z(m) is defined on [m*, c/r] = [{self.m_star}, {safe}], got m={mi}")
            if mi >= safe:
                out[i] = 0.0
                continue
            out[i] = self._z_scalar(min(max(mi, self.m_star), safe))
        return float(out[0]) if np.ndim(m) == 0 else out

    def _z_scalar(self, m: float) -> float:
        for seg in self.segments:
            if seg.m_lo <= m <= seg.m_hi:
                return seg.z_at(m)
        if self.m_star == 0.0:
            # alpha = 0: bridge the guard gap to the singular end point (0, 1)
            m_n, z_n = self.nodes[:2].T
            return float(np.interp(m, m_n, z_n))
        return lower_curve(m, self.k, self.p)

    def y_alpha_m(self, m):
        if np.ndim(m) == 0 and m >= self.k.safe_level:
            return terminal_y_alpha(self.k, self.p)
        return y_alpha_tilde(m, self.z(m), self.k, self.p)

    def y_m(self, m):
        return np.asarray(self.z(m)) * self.y_alpha_m(m)

    def to_csv(self, path) -> None:
        """Write one row per node: m, z, y_m, y_alpha_m with 17 significant digits."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["m", "z", "y_m", "y_alpha_m"])
            for m, z in self.nodes:
                ya = self.y_alpha_m(m) if m < self.k.safe_level else terminal_y_alpha(self.k, self.p)
                writer.writerow([f"{v:.17g}" for v in (m, z, z * ya, ya)])


# ---------------------------------------------------------------------------
# dual boundary from z


def y_alpha_tilde(m, z, k: DerivedConstants, p: MarketParams):
    """Upper dual boundary given z(m).

    Solves the linear relation for 1/y_alpha_m, multiplied through by
    z^(1-B2) so both sides stay bounded as z -> 0.
    """
    b1, b2 = k.b1, k.b2
    safe = k.safe_level
    m = np.asarray(m, dtype=float)
    z = np.asarray(z, dtype=float)
    zd = z ** (b1 - b2)
    num = b1 * b2 / (b1 - b2) * (zd - 1)
    den = (safe - m) * z ** (1 - b2) - (safe - p.alpha * m) * (b1 * (1 - b2) * zd + b2 * (b1 - 1)) / (b1 - b2)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    if np.any(~(out > 0)):
        raise DomainError("non-positive dual boundary: z-curve inconsistent with m")
    return float(out) if out.ndim == 0 else out


def terminal_y_alpha(k: DerivedConstants, p: MarketParams) -> float:
    """Limit of the upper dual boundary as m -> c/r from below."""
    return k.b1 / ((k.b1 - 1) * (1 - p.alpha) * k.safe_level)


# ---------------------------------------------------------------------------
# integration


def _trace_switching(k, p, m0, z0, rtol, atol, method, max_segments=200):
    """Integrate backward in m from (m0, z0), switching between z-form and Abel form.

    Returns (segments, hit) where hit is the (m, z) crossing of z = 1/x(m).
    """
    coef = OdeCoefficients(k, p)
    safe = k.safe_level
    mh = m_hat(k, p)
    zh = lower_curve(mh, k, p)
    guard = GUARD_RADIUS

    def slope_ratio(m, z):
        g, h, _, _ = coef.both(m, z)
        return g, h

    def guard_event(m, z):
        return math.hypot((m - mh) / safe, z - zh) - guard

    segments: list[_Segment] = []
    path: list[tuple[float, float]] = [(m0, z0)]
    m, z = m0, z0
    g, h = slope_ratio(m, z)
    form = "z" if abs(g) <= SLOPE_LIMIT * abs(h) else "abel"
    for _ in range(max_segments):
        if form == "z":

            def rhs(mm, y):
                gg, hh = slope_ratio(mm, y[0])
                with np.errstate(all="ignore"):
                    return [gg / hh]

            def ev_cross(mm, y):
                return crossing_function(mm, y[0], k, p)

            def ev_switch(mm, y):
                gg, hh = slope_ratio(mm, y[0])
                return SLOPE_LIMIT * abs(hh) - abs(gg)

            def ev_guard(mm, y):
                return guard_event(mm, y[0])

            def ev_floor(mm, y):
                return mm

            events = [ev_cross, ev_switch, ev_guard, ev_floor]
            for e in events:
                e.terminal = True
            sol = solve_ivp(rhs, [m, -safe], [z], method=method, rtol=rtol, atol=atol, events=events, dense_output=True)
            if sol.status == -1:
                raise ShootingError(f"integrator failed: {sol.message}", np.array(path))
            m_end, z_end = float(sol.t[-1]), float(sol.y[0, -1])
            segments.append(_Segment("z", m_end, m, sol.sol))
            path.extend(zip(sol.t[1:].tolist(), sol.y[0, 1:].tolist()))
        else:
            g, h = slope_ratio(m, z)
            direction = -1.0 if g * h > 0 else 1.0  # dz has the sign of dm * G/H, with dm < 0

            def rhs(zz, y):
                gg, hh = slope_ratio(y[0], zz)
                with np.errstate(all="ignore"):
                    return [hh / gg]

            def ev_cross(zz, y):
                return crossing_function(y[0], zz, k, p)

            def ev_switch(zz, y):
                gg, hh = slope_ratio(y[0], zz)
                return abs(gg) - SLOPE_LIMIT / HYSTERESIS * abs(hh)

            def ev_guard(zz, y):
                return guard_event(y[0], zz)

            def ev_top(zz, y):
                return 1.0 - zz

            events = [ev_cross, ev_switch, ev_guard, ev_top]
            for e in events:
                e.terminal = True
            z_stop = 1.0 if direction > 0 else 0.0
            sol = solve_ivp(rhs, [z, z_stop], [m], method=method, rtol=rtol, atol=atol, events=events, dense_output=True)
            if sol.status == -1:
                raise ShootingError(f"integrator failed: {sol.message}", np.array(path))
            z_end, m_end = float(sol.t[-1]), float(sol.y[0, -1])
            segments.append(_Segment("abel", m_end, m, sol.sol, (z, z_end)))
            path.extend(zip(sol.y[0, 1:].tolist(), sol.t[1:].tolist()))
        fired = [i for i, te in enumerate(sol.t_events) if len(te)]
        m, z = m_end, z_end
        if not fired:
            raise ShootingError("left D0 without crossing z = 1/x(m)", np.array(path))
        which = fired[0]
        if which == 0:
            return segments, (m, z), np.array(path)
        if which == 1:
            form = "abel" if form == "z" else "z"
            continue
        if which == 2:
            raise ShootingError(
                f"trajectory entered the guard disc around the singular point ({mh}, {zh})", np.array(path)
            )
        raise ShootingError("trajectory left D0 through m = 0 or z = 1 without crossing", np.array(path))
    raise ShootingError("too many form switches", np.array(path))


def shoot(
    k: DerivedConstants,
    p: MarketParams,
    eps_list=DEFAULT_EPS,
    step_control: dict | None = None,
) -> FreeBoundaryCurve:
    """Trace z(m) from z(c/r) = eps for each eps; the smallest eps defines the curve.

    ``m_star`` is the crossing of the smallest-eps run, so that
    z(m*) = 1/x(m*) holds on the returned curve; the eps -> 0 extrapolation
    is kept as ``m_star_extrapolated``. ``step_control`` may set ``rtol``,
    ``atol`` and ``method`` for solve_ivp. Raises ShootingError (with the
    trajectory) if a run spirals into the guard disc of the interior singular
    point, and ConvergenceError if the two smallest eps disagree on m* by
    more than 1e-4 * c/r.
    """
    sc = {"rtol": 1e-11, "atol": 1e-13, "method": "DOP853"}
    sc.update(step_control or {})
    eps_list = sorted(eps_list, reverse=True)
    safe = k.safe_level
    if p.alpha == 0:
        # every launch height joins the same curve within round-off; the largest avoids the
        # near-vertical start that defeats the step-size control for tiny eps
        return _shoot_ruin_case(k, p, eps_list[0], sc)
    estimates = {}
    last = None
    for eps in eps_list:
        segments, hit, path = _trace_switching(k, p, safe, eps, sc["rtol"], sc["atol"], sc["method"])
        estimates[eps] = hit[0]
        last = (segments, hit, path)
    if len(eps_list) >= 2:
        e1, e2 = eps_list[-2], eps_list[-1]
        if abs(estimates[e1] - estimates[e2]) > EPS_AGREEMENT * safe:
            raise ConvergenceError(f"m* not converged in eps: m*({e1})={estimates[e1]}, m*({e2})={estimates[e2]}")
    segments, hit, path = last
    nodes = _nodes_from_path(path, hit, safe)
    return FreeBoundaryCurve(
        k, p, nodes, m_star=float(hit[0]), segments=segments, eps_estimates=estimates,
        m_star_extrapolated=extrapolate_m_star([estimates[e] for e in eps_list]),
    )


def extrapolate_m_star(values) -> float:
    """Limit of crossings for eps shrinking by a constant factor.

    Aitken's delta-squared on the last three values when their differences
    contract geometrically; otherwise the last value, whose error is then
    below the visible round-off.
    """
    values = list(values)
    if len(values) < 3:
        return values[-1]
    m1, m2, m3 = values[-3:]
    d1, d2 = m2 - m1, m3 - m2
    if d1 == 0 or d2 / d1 <= 0 or abs(d2 / d1) >= 0.5:
        return m3
    return m3 + d2 * d2 / (d1 - d2)


def _nodes_from_path(path, hit, safe):
    pts = np.asarray(path, dtype=float)
    pts = np.vstack([pts, [hit]])
    pts[0] = (safe, 0.0)
    order = np.argsort(pts[:, 0], kind="stable")
    pts = pts[order]
    _, idx = np.unique(pts[:, 0], return_index=True)
    return pts[idx]


def _shoot_ruin_case(k, p, eps, sc):
    """alpha = 0: the curve runs into the singular point (0, 1), so m* = 0."""
    safe = k.safe_level
    segments, path = _segments_until_guard(k, p, safe, eps, sc)
    nodes = _nodes_from_path(path, (0.0, 1.0), safe)
    return FreeBoundaryCurve(k, p, nodes, m_star=0.0, segments=segments, eps_estimates={eps: 0.0},
                             m_star_extrapolated=0.0)


def _segments_until_guard(k, p, m0, eps, sc):
    """Dense-output segment of the alpha = 0 trajectory up to the guard disc around (0, 1)."""
    segs = []

    def rhs(mm, y):
        g, h, _, _ = OdeCoefficients(k, p).both(mm, y[0])
        with np.errstate(divide="ignore", invalid="ignore"):
            return [g / h]

    def ev_guard(mm, y):
        return math.hypot(mm / k.safe_level, y[0] - 1) - GUARD_RADIUS

    ev_guard.terminal = True
    sol = solve_ivp(rhs, [m0, 0.0], [eps], method=sc["method"], rtol=sc["rtol"], atol=sc["atol"], events=[ev_guard],
                    dense_output=True)
    if not len(sol.t_events[0]):
        raise ShootingError("alpha = 0 trajectory did not approach (0, 1)", np.column_stack([sol.t, sol.y[0]]))
    segs.append(_Segment("z", float(sol.t[-1]), m0, sol.sol))
    return segs, np.column_stack([sol.t, sol.y[0]])


# ---------------------------------------------------------------------------
# comparison curves (arc-length parametrization, independent of the form switching)


@dataclass(frozen=True)
class ComparisonCurve:
    launch: tuple[float, float]
    m_tilde: float  # m-value where the curve meets z = 1/x(m)
    path: np.ndarray  # (n, 2) of (m, z), m decreasing
    sol: Callable = field(repr=False)
    s_end: float = 0.0

    def z(self, m: float) -> float:
        """Height of the curve at m (m monotone decreasing along the path is assumed)."""
        s = brentq(lambda s: float(self.sol(s)[0]) - m, 0.0, self.s_end, xtol=1e-14)
        return float(self.sol(s)[1])


def trace_arclength(k: DerivedConstants, p: MarketParams, m0: float, z0: float, rtol=1e-12, atol=1e-14,
                    max_length: float = 1e4) -> ComparisonCurve:
    """Follow the direction field -(H, G)/|(H, G)| from (m0, z0) until z = 1/x(m).

    The arc-length form has no singular denominator away from the two
    singular points, so it serves as an independent check on ``shoot``.
    """
    coef = OdeCoefficients(k, p)
    safe = k.safe_level
    scale = np.array([safe, 1.0])

    def rhs(_, y):
        g, h, _, _ = coef.both(y[0], y[1])
        dm, dz = -h / safe, -g
        n = math.hypot(dm, dz)
        return [dm / n * safe, dz / n]

    def ev_cross(_, y):
        return crossing_function(y[0], y[1], k, p)

    ev_cross.terminal = True
    ev_cross.direction = 1

    def ev_floor(_, y):
        return y[0]

    ev_floor.terminal = True
    sol = solve_ivp(rhs, [0.0, max_length], [m0, z0], method="DOP853", rtol=rtol, atol=atol * scale,
                    events=[ev_cross, ev_floor], dense_output=True)
    if len(sol.t_events[0]):
        return ComparisonCurve((m0, z0), float(sol.y_events[0][0][0]), sol.y.T, sol.sol, float(sol.t_events[0][0]))
    if len(sol.t_events[1]) and abs(sol.y_events[1][0][1] - lower_curve(0.0, k, p)) < 1e-6:
        # ran along z = 1 into the corner (0, 1/x(0)), which is the end of the left edge
        return ComparisonCurve((m0, z0), 0.0, sol.y.T, sol.sol, float(sol.t_events[1][0]))
    raise ShootingError("comparison curve did not reach z = 1/x(m)", sol.y.T)


def comparison_curves(k: DerivedConstants, p: MarketParams, offset: float = 1e-3):
    """Curves launched from the lower edge and from the right edge near (c/r, 0).

    Returns (from_lower, from_right); the terminal curve z(m) must lie
    between them wherever all three are defined.
    """
    safe = k.safe_level
    m0 = safe * (1 - offset)
    z_low = lower_curve(m0, k, p)
    from_lower = trace_arclength(k, p, m0, z_low * (1 + 1e-9))
    from_right = trace_arclength(k, p, safe, max(offset, z_low))
    return from_lower, from_right


def reference_m_star(k: DerivedConstants, p: MarketParams, eps: float = 1e-5) -> float:
    """m* from the arc-length integration launched at (c/r, eps)."""
    return trace_arclength(k, p, k.safe_level, eps).m_tilde


def boundary_check(curve: FreeBoundaryCurve) -> float:
    """Relative gap between the two dual boundary constructions at m*."""
    ya_hat = y_boundaries(curve.m_star, curve.k, curve.p).y_alpha_m
    return abs(curve.y_alpha_m(curve.m_star) / ya_hat - 1)
