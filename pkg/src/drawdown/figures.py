"""Tabulated data behind the standard plots of the solution (no rendering).

Each ``figure_N`` returns ``(header, rows)``; ``write_csv`` stores them with
17 significant digits so values re-read from disk are bit-identical.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .closed_region import pi_ruin
from .controller_stopper import m_hat
from .errors import DomainError
from .free_boundary import lower_curve, trace_arclength

FIGURES = tuple(range(1, 9))
N_CURVE = 201


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _interior(lo, hi, n):
    return np.linspace(lo, hi, n + 2)[1:-1]


def figure_1(surface):
    """Edges of the (m, z) domain: upper z = 1, lower/left z = 1/x(m), right m = c/r."""
    k, p = surface.constants, surface.params
    safe = k.safe_level
    mh = m_hat(k, p)
    rows = [("upper", m, 1.0) for m in np.linspace(0.0, safe, N_CURVE)]
    left = np.linspace(0.0, mh, N_CURVE)
    rows += [("left", m, lower_curve(m, k, p)) for m in left]
    lower = np.linspace(mh, safe, N_CURVE)[:-1]
    rows += [("lower", m, lower_curve(m, k, p)) for m in lower]
    rows.append(("lower", safe, 0.0))
    rows += [("right", safe, z) for z in np.linspace(0.0, 1.0, N_CURVE)]
    rows.append(("corner", mh, lower_curve(mh, k, p)))
    return ["curve", "m", "z"], rows


def integral_curve_launches(surface, n_lower: int = 4, n_right: int = 4):
    """Launch points on the lower edge (m > m_hat) and on the right edge (0 < z < 1)."""
    k, p = surface.constants, surface.params
    safe = k.safe_level
    mh = m_hat(k, p)
    pts = [(m, lower_curve(m, k, p) * (1 + 1e-9)) for m in _interior(mh, safe, n_lower)]
    pts += [(safe, z) for z in _interior(0.0, 1.0, n_right)]
    return pts


def figure_2(surface, n_lower: int = 4, n_right: int = 4):
    """Integral curves from the lower and right edges, each followed to z = 1/x(m)."""
    k, p = surface.constants, surface.params
    rows = []
    for i, (m0, z0) in enumerate(integral_curve_launches(surface, n_lower, n_right)):
        curve = trace_arclength(k, p, m0, z0)
        for m, z in curve.path:
            rows.append((i, m0, z0, curve.m_tilde, m, z))
    return ["curve", "launch_m", "launch_z", "m_tilde", "m", "z"], rows


def figure_3(surface):
    """The terminal curve z(m) on [m*, c/r]."""
    curve = surface.curve
    ms = np.linspace(curve.m_star, surface.safe_level, N_CURVE)
    return ["m", "z"], [(m, curve.z(m)) for m in ms]


def figure_4(surface):
    """Optimal investment at the high-water mark, pi*(m, m) for m* <= m <= c/r."""
    ms = np.linspace(surface.m_star, surface.safe_level, N_CURVE)
    return ["m", "pi_star"], [(m, surface.pi_star(m, m)) for m in ms]


def _state_grid(surface, n_m, n_w):
    p = surface.params
    for m in _interior(0.0, surface.safe_level, n_m):
        yield m, np.linspace(p.alpha * m, m, n_w)


def figure_5(surface, n_m: int = 60, n_w: int = 41):
    """phi(w, m) over alpha*m <= w <= m, 0 < m < c/r."""
    rows = []
    for m, ws in _state_grid(surface, n_m, n_w):
        rows += zip(np.full(n_w, m), ws, surface.phi(ws, m))
    return ["m", "w", "phi"], rows


def figure_6(surface, n_m: int = 6, n_w: int = 101):
    """pi*(w, m) along w for a few fixed m."""
    rows = []
    for m, ws in _state_grid(surface, n_m, n_w):
        rows += zip(np.full(n_w, m), ws, surface.pi_star(ws, m))
    return ["m", "w", "pi_star"], rows


def figure_7(surface, n_lines: int = 6, n_m: int = 101):
    """pi*(w, m) along m in [w, min(w/alpha, c/r)] for a few fixed w."""
    p = surface.params
    safe = surface.safe_level
    rows = []
    for w in _interior(0.0, safe, n_lines):
        top = safe if p.alpha == 0 else min(w / p.alpha, safe)
        for m in np.linspace(w, top, n_m):
            rows.append((w, m, surface.pi_star(w, m)))
    return ["w", "m", "pi_star"], rows


def figure_8(surface, n_m: int = 100, n_w: int = 1001):
    """Smallest gap between the ruin-minimizing investment and pi* over w, per m."""
    k, p = surface.constants, surface.params
    rows = []
    for m, ws in _state_grid(surface, n_m, n_w):
        gap = pi_ruin(ws, k, p) - np.asarray(surface.pi_star(ws, m))
        j = int(np.argmin(gap))
        rows.append((m, gap[j], ws[j]))
    return ["m", "min_gap", "argmin_w"], rows


_BUILDERS = {1: figure_1, 2: figure_2, 3: figure_3, 4: figure_4, 5: figure_5, 6: figure_6, 7: figure_7,
             8: figure_8}


def figure_data(which: int, surface):
    if which not in _BUILDERS:
        raise DomainError(f"figure number must be one of {FIGURES}, got {which}")
    return _BUILDERS[which](surface)


def write_figures(surface, outdir, which=FIGURES) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for n in which:
        header, rows = figure_data(n, surface)
        path = outdir / f"figure{n}.csv"
        write_csv(path, header, rows)
        paths.append(path)
    return paths
