"""Closed-form value and strategy once the high-water mark is at or above c/r.

With m >= c/r the drawdown level alpha*m is a fixed ruin level, so the
lifetime-ruin solution applies verbatim. With alpha = 0 the same formulas give
the ruin probability for every m.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError
from .market import DerivedConstants, MarketParams, risk_loading

# relative slack absorbed at the edges of the domain (root-finder round-off)
EDGE_RTOL = 1e-12


def _check_state(w, m, k: DerivedConstants, p: MarketParams):
    safe = k.safe_level
    if m < safe * (1 - EDGE_RTOL):
        raise DomainError(f"closed form needs m >= c/r = {safe}, got m={m}")
    w = np.asarray(w, dtype=float)
    lo = p.alpha * m
    if np.any(w < lo - EDGE_RTOL * max(lo, 1.0)):
        raise DomainError(f"wealth below the drawdown level alpha*m = {lo}: min w = {w.min()}")
    if np.any(w > safe * (1 + EDGE_RTOL)):
        raise DomainError(f"wealth above the safe level c/r = {safe}: max w = {w.max()}")
    return np.clip(w, lo, safe)


def phi_above_safe(w, m, k: DerivedConstants, p: MarketParams):
    """Minimum probability of lifetime drawdown for m >= c/r.

    Equals ((c/r - w) / (c/r - alpha*m))**gamma on alpha*m <= w <= c/r. Accepts
    scalar or array ``w``; wealth within 1e-12 relative of c/r clamps to 0.
    """
    w = _check_state(w, m, k, p)
    safe = k.safe_level
    out = ((safe - w) / (safe - p.alpha * m)) ** k.gamma
    return out if out.ndim else float(out)


def phi_above_safe_derivatives(w, m, k: DerivedConstants, p: MarketParams):
    """Return (phi, phi_w, phi_ww) of the closed form."""
    w = _check_state(w, m, k, p)
    safe = k.safe_level
    g = k.gamma
    gap = safe - w
    phi = (gap / (safe - p.alpha * m)) ** g
    with np.errstate(divide="ignore", invalid="ignore"):
        phi_w = np.where(gap > 0, -g * phi / gap, 0.0)
        phi_ww = np.where(gap > 0, g * (g - 1) * phi / gap**2, 0.0)
    if phi.ndim == 0:
        return float(phi), float(phi_w), float(phi_ww)
    return phi, phi_w, phi_ww


def pi_ruin(w, k: DerivedConstants, p: MarketParams):
    """Dollar amount in the risky asset that minimizes the probability of lifetime ruin.

    Linear in wealth and zero at the safe level.
    """
    w = np.asarray(w, dtype=float)
    if np.any(w > k.safe_level * (1 + EDGE_RTOL)):
        raise DomainError(f"ruin strategy needs w <= c/r = {k.safe_level}, got max w = {w.max()}")
    out = risk_loading(p) / (k.gamma - 1.0) * np.maximum(k.safe_level - w, 0.0)
    return out if out.ndim else float(out)


def ruin_slope(k: DerivedConstants, p: MarketParams) -> float:
    """Magnitude of d(pi_ruin)/dw."""
    return risk_loading(p) / (k.gamma - 1.0)
