"""Independent checks on a computed value surface.

* the generator L^beta and its minimum over beta (a concave-up quadratic);
* sufficient conditions for a function to bound the minimum
  drawdown probability from below, evaluated on a grid;
* a finite-difference policy-iteration solver for the fixed-maximum problem,
  used as an oracle for Phi;
* monotonicity and domination statements about the optimal strategy.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .closed_region import pi_ruin
from .errors import ConvergenceError, DomainError
from .market import DerivedConstants, MarketParams, risk_loading

FD_STEP = 1e-5  # times c/r
M_DERIVATIVE_BOUND = 1e2


# ---------------------------------------------------------------------------
# the operator


def l_beta(h, h_w, h_ww, w, beta, p: MarketParams):
    """(r w + (mu - r) beta - c) h_w + sigma^2 beta^2 h_ww / 2 - lam h."""
    return (p.r * w + (p.mu - p.r) * beta - p.c) * h_w + 0.5 * p.sigma**2 * beta**2 * h_ww - p.lam * h


def minimize_l_beta(h, h_w, h_ww, w, k: DerivedConstants, p: MarketParams):
    """Return (min over beta of L^beta h, minimizing beta).

    Only meaningful where h_ww > 0; elsewhere both outputs are nan.
    """
    h, h_w, h_ww, w = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (h, h_w, h_ww, w)))
    ok = h_ww > 0
    safe_ww = np.where(ok, h_ww, 1.0)
    value = np.where(ok, (p.r * w - p.c) * h_w - k.delta * h_w**2 / safe_ww - p.lam * h, np.nan)
    beta = np.where(ok, -risk_loading(p) * h_w / safe_ww, np.nan)
    if value.ndim == 0:
        return float(value), float(beta)
    return value, beta


# ---------------------------------------------------------------------------
# reports


@dataclass
class ConditionResult:
    name: str
    tolerance: float
    worst_violation: float
    location: list | None
    passed: bool

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "tolerance": self.tolerance,
            "worst_violation": self.worst_violation,
            "location": self.location,
            "pass": self.passed,
        }


@dataclass
class HjbReport:
    grid: dict
    conditions: list
    residuals: np.ndarray = field(repr=False)
    excluded_points: int = 0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def condition(self, name_prefix: str) -> ConditionResult:
        for c in self.conditions:
            if c.name.startswith(name_prefix):
                return c
        raise KeyError(name_prefix)

    def to_dict(self) -> dict:
        return {
            "grid": self.grid,
            "excluded_points": self.excluded_points,
            "pass": self.passed,
            "conditions": [c.to_dict() for c in self.conditions],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


class _Worst:
    """Track the largest violation and where it happened."""

    def __init__(self):
        self.value = -math.inf
        self.where = None

    def update(self, violations, ws, m):
        violations = np.asarray(violations, dtype=float)
        if violations.size == 0:
            return
        i = int(np.nanargmax(violations)) if np.any(np.isfinite(violations)) else 0
        v = float(violations.flat[i])
        if not np.isfinite(v):
            self.value, self.where = math.inf, [float(np.asarray(ws).flat[i]), float(m)]
        elif v > self.value:
            self.value, self.where = v, [float(np.asarray(ws).flat[i]), float(m)]

    def result(self, name, tol) -> ConditionResult:
        worst = max(self.value, 0.0) if self.value != -math.inf else 0.0
        return ConditionResult(name, tol, worst, self.where, bool(np.isfinite(worst) and worst <= tol))


# ---------------------------------------------------------------------------
# condition suite


class PerturbedSurface:
    """A surface plus amplitude * sin^2 bump in w; keeps the boundary values.

    Negative control for the condition suite: the bump breaks the HJB equation.
    """

    def __init__(self, base, amplitude: float = 1e-3):
        self.base = base
        self.amplitude = amplitude
        self.params = base.params
        self.constants = base.constants
        self.m_star = base.m_star

    def phi(self, w, m):
        w = np.asarray(w, dtype=float)
        p = self.params
        hi = min(m, self.constants.safe_level)
        s = (w - p.alpha * m) / (hi - p.alpha * m)
        out = np.asarray(self.base.phi(w, m)) + self.amplitude * np.sin(np.pi * s) ** 2
        return float(out) if out.ndim == 0 else out


def _fd_derivatives(surface, w, m, step):
    f = np.asarray(surface.phi(np.concatenate([w - step, w, w + step]), m))
    n = len(w)
    fm, f0, fp = f[:n], f[n : 2 * n], f[2 * n :]
    return f0, (fp - fm) / (2 * step), (fp - 2 * f0 + fm) / step**2


def check_hjb_conditions(
    surface,
    n_m: int = 200,
    n_w: int = 200,
    m_range: tuple[float, float] | None = None,
    tol: float = 1e-5,
    analytic: bool | None = None,
) -> HjbReport:
    """Evaluate the verification conditions on an n_m x n_w grid.

    Derivatives in w come from ``surface.derivatives`` when available (or
    when ``analytic`` is True) and from central differences with step
    1e-5 * c/r otherwise. m-derivatives always use finite differences.
    """
    p, k = surface.params, surface.constants
    safe = k.safe_level
    step = FD_STEP * safe
    lo_m, hi_m = m_range if m_range is not None else (0.02 * safe, 1.2 * safe)
    ms = np.linspace(lo_m, hi_m, n_m)
    use_analytic = hasattr(surface, "derivatives") if analytic is None else analytic
    m_star = getattr(surface, "m_star", None)

    mono, convex, m_bound, m_diag, m_diag_eq, bnd_low, bnd_safe, hjb, hjb_eq = (_Worst() for _ in range(9))
    residuals = np.full((n_m, n_w), np.nan)
    excluded = 0
    for i, m in enumerate(ms):
        lo, hi = p.alpha * m, min(m, safe)
        # shape in w on a uniform grid including the end points
        wg = np.linspace(lo, hi, n_w)
        fg = np.asarray(surface.phi(wg, m))
        mono.update(np.diff(fg), wg[1:], m)
        convex.update(-(fg[2:] - 2 * fg[1:-1] + fg[:-2]), wg[1:-1], m)
        # boundary values
        bnd_low.update([abs(fg[0] - 1.0)], [lo], m)
        if m >= safe:
            bnd_safe.update([abs(fg[-1])], [hi], m)
        # the HJB inequality and equation at interior points
        wi = np.linspace(lo + 2 * step, hi - 2 * step, n_w)
        if use_analytic:
            h, h_w, h_ww = surface.derivatives(wi, m)
        else:
            h, h_w, h_ww = _fd_derivatives(surface, wi, m, step)
        h_ww = np.asarray(h_ww, dtype=float)
        ok = np.isfinite(h_ww) & (h_ww > 0)
        excluded += int(np.sum(~ok))
        res, _ = minimize_l_beta(h, h_w, np.where(ok, h_ww, -1.0), wi, k, p)
        residuals[i] = res
        hjb.update(np.where(ok, -res, -np.inf), wi, m)
        hjb_eq.update(np.where(ok, np.abs(res), -np.inf), wi, m)
        # one-sided m-derivatives where both neighbours contain w
        fwd_ok = (wg >= p.alpha * (m + step)) & (wg <= min(m + step, safe))
        bwd_ok = (wg >= p.alpha * (m - step)) & (wg <= min(m - step, safe))
        for sel, other in ((fwd_ok, m + step), (bwd_ok, m - step)):
            if np.any(sel):
                d = (np.asarray(surface.phi(wg[sel], other)) - fg[sel]) / (other - m)
                m_bound.update(np.where(np.isfinite(d), np.abs(d) - M_DERIVATIVE_BOUND, np.inf), wg[sel], m)
        # right m-derivative on the diagonal
        if m < safe:
            f0 = surface.phi(m, m)
            f1 = surface.phi(m, m + step)
            f2 = surface.phi(m, m + 2 * step)
            dm = (-3 * f0 + 4 * f1 - f2) / (2 * step)
            m_diag.update([-dm], [m], m)
            if m_star is not None and m >= m_star:
                m_diag_eq.update([abs(dm)], [m], m)

    conditions = [
        mono.result("non-increasing in w", tol),
        convex.result("convex in w", tol),
        m_bound.result("bounded one-sided m-derivatives", 0.0),
        m_diag.result("h_m(m, m) >= 0", tol),
        m_diag_eq.result("h_m(m, m) = 0 for m* <= m < c/r", tol),
        bnd_low.result("h(alpha m, m) = 1", tol),
        bnd_safe.result("h(c/r, m) = 0 for m >= c/r", tol),
        hjb.result("min over beta of L^beta h >= 0", tol),
        hjb_eq.result("min over beta of L^beta h = 0", tol),
    ]
    grid = {
        "n_m": n_m,
        "n_w": n_w,
        "m_range": [float(lo_m), float(hi_m)],
        "fd_step": step,
        "derivatives": "analytic" if use_analytic else "central differences",
    }
    return HjbReport(grid, conditions, residuals, excluded)


# ---------------------------------------------------------------------------
# finite-difference oracle for the fixed-maximum problem


@dataclass
class BvpSolution:
    w: np.ndarray
    h: np.ndarray
    pi: np.ndarray
    iterations: int


# coefficient of t^2 in the cubic-quartic fit through t = 0, 1, 2, 3 (times dt^2)
_T = np.arange(4.0)
_FIT_T2 = np.linalg.inv(np.column_stack([_T**0, _T**2, _T**3, _T**4]))[1]


def restricted_bvp_oracle(m: float, k: DerivedConstants, p: MarketParams, grid_size: int = 2000,
                          max_iter: int = 100) -> BvpSolution:
    """Solve lam h = (r w - c) h_w + min_pi [(mu-r) pi h_w + sigma^2 pi^2 h_ww / 2] by policy iteration.

    For m < c/r the domain is [alpha m, m] with h(alpha m) = 1 and zero
    investment at w = m (wealth cannot rise above m because r m < c). For
    m >= c/r the domain is [alpha m, c/r] with h(c/r) = 0.

    The grid is uniform in t with w = w_right - L t^2. Near w = m the value
    behaves like a power series in sqrt(m - w), which is smooth in t, so
    central differences in t are second-order accurate.
    """
    if not m > 0:
        raise DomainError(f"m must be positive, got {m}")
    safe = k.safe_level
    reflect = m < safe
    right = m if reflect else safe
    span = right - p.alpha * m
    n = int(grid_size)
    t = np.linspace(0.0, 1.0, n + 1)
    dt = t[1]
    w = right - span * t**2
    rho = risk_loading(p)
    pi = rho / (k.gamma - 1) * (safe - w) * t
    j = np.arange(1, n)
    tj = t[j]
    # h_w = c_w h_t ; h_ww = c_tt h_tt + c_t h_t
    c_w = -1.0 / (2 * span * tj)
    c_tt = 1.0 / (4 * span**2 * tj**2)
    c_t = -1.0 / (4 * span**2 * tj**3)
    h = None
    for it in range(1, max_iter + 1):
        drift = p.r * w + (p.mu - p.r) * pi - p.c
        diff = 0.5 * p.sigma**2 * pi**2
        a_t = drift[j] * c_w + diff[j] * c_t
        a_tt = diff[j] * c_tt
        # banded storage with one sub- and three super-diagonals: ab[3 + row - col, col]
        ab = np.zeros((5, n + 1))
        rhs = np.zeros(n + 1)
        ab[3, j] = -2 * a_tt / dt**2 - p.lam
        ab[2, j + 1] = a_tt / dt**2 + a_t / (2 * dt)
        ab[4, j - 1] = a_tt / dt**2 - a_t / (2 * dt)
        ab[3, n] = 1.0
        rhs[n] = 1.0
        if reflect:
            # lam h = (r m - c) h_w at w = m, with h_w(m) = -(coefficient of t^2) / span
            drift_m = p.r * m - p.c
            for q in range(4):
                ab[3 - q, q] += -drift_m / span * _FIT_T2[q] / dt**2
            ab[3, 0] -= p.lam
        else:
            ab[3, 0] = 1.0
        h_new = solve_banded((1, 3), ab, rhs)
        h_t = (h_new[j + 1] - h_new[j - 1]) / (2 * dt)
        h_tt = (h_new[j + 1] - 2 * h_new[j] + h_new[j - 1]) / dt**2
        hw = c_w * h_t
        hww = c_tt * h_tt + c_t * h_t
        new_pi = pi.copy()
        convex = hww > 0
        new_pi[j] = np.where(convex, -rho * hw / np.where(convex, hww, 1.0), pi[j])
        new_pi[0] = 0.0
        dh = math.inf if h is None else float(np.max(np.abs(h_new - h)))
        dpi = float(np.max(np.abs(new_pi - pi))) / max(float(np.max(np.abs(new_pi))), 1e-300)
        h, pi = h_new, new_pi
        if dh < 1e-10 and dpi < 1e-6:
            order = np.argsort(w)
            return BvpSolution(w[order], h[order], pi[order], it)
    raise ConvergenceError(f"policy iteration did not converge in {max_iter} iterations at m={m}")


def observed_order(err_coarse: float, err_fine: float, refinement: float = 2.0) -> float:
    return math.log(err_coarse / err_fine) / math.log(refinement)


# ---------------------------------------------------------------------------
# strategy statements


@dataclass
class StatementResult:
    name: str
    asserted: bool
    worst_violation: float
    location: list | None
    passed: bool


@dataclass
class ShapeReport:
    statements: list

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.statements if s.asserted)

    def get(self, name_prefix: str, asserted: bool = True) -> StatementResult:
        for s in self.statements:
            if s.name.startswith(name_prefix) and s.asserted == asserted:
                return s
        raise KeyError(name_prefix)

    def to_dict(self) -> dict:
        return {"pass": self.passed, "statements": [asdict(s) for s in self.statements]}


def strategy_shape_suite(surface, n_m: int = 20, n_w: int = 1000, margin: float = 1e-6) -> ShapeReport:
    """Strategy monotonicity and domination statements.

    Asserted on 0 < m <= m*; measured (reported, not asserted) on
    m* < m < c/r. Grid points stay ``margin * c/r`` away from the edges.
    """
    p, k = surface.params, surface.constants
    safe = k.safe_level
    gap = margin * safe
    m_star = surface.m_star
    results = []
    regions = []
    if m_star > 0:
        regions.append((True, np.linspace(m_star / n_m, m_star, n_m)))
    regions.append((False, np.linspace(m_star, safe, n_m + 2)[1:-1]))
    for asserted, ms in regions:
        dec, dom, diff_inc, m_inc = (_Worst() for _ in range(4))
        for m in ms:
            w = np.linspace(p.alpha * m + gap, min(m, safe) - gap, n_w)
            ps = np.asarray(surface.pi_star(w, m))
            pr = pi_ruin(w, k, p)
            dec.update(np.diff(ps), w[1:], m)
            dom.update(ps - pr, w, m)
            diff_inc.update(-np.diff(pr - ps), w[1:], m)
        # increasing in m at fixed w: m runs over (w, min(w / alpha, region top)]
        top = ms[-1]
        bottom = ms[0] if not asserted else 0.0
        for w in np.linspace(max(bottom, gap) + gap, top - 2 * gap, 8):
            m_hi = top if p.alpha == 0 else min(top, w / p.alpha)
            m_lo = max(w, bottom) + gap
            if m_hi - m_lo <= 2 * gap:
                continue
            m_line = np.linspace(m_lo, m_hi, 50)
            vals = np.array([surface.pi_star(w, mm) for mm in m_line])
            m_inc.update(-np.diff(vals), np.full(49, w), float(m_line[int(np.argmin(np.diff(vals)))]))
        for tracker, name in (
            (dec, "pi* decreasing in w"),
            (dom, "pi* below the ruin-minimizing investment"),
            (diff_inc, "ruin-minimizing investment minus pi* increasing in w"),
            (m_inc, "pi* increasing in m"),
        ):
            # strict inequalities: the largest difference must be negative
            results.append(StatementResult(name, asserted, float(tracker.value), tracker.where,
                                           bool(tracker.value < 0)))
    return ShapeReport(results)
