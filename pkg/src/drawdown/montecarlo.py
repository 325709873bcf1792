"""Monte Carlo estimate of the lifetime drawdown probability under a feedback strategy.

Wealth follows dW = (r W + (mu - r) pi(W, M) - c) dt + sigma pi(W, M) dB with
running maximum M. The probability of drawdown before death equals
E[exp(-lam tau_alpha)], tau_alpha the first time W <= alpha M.

Each path owns a small xoshiro256** stream seeded from (master_seed, path
index), so results do not depend on the number of worker threads and every
strategy sees the same Brownian increments path by path.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numba
import numpy as np
from numba import prange, uint64

from .errors import SimulationError
from .market import MarketParams, derive_constants, risk_loading

log = logging.getLogger(__name__)

if "NUMBA_THREADING_LAYER" not in os.environ:
    # skip the TBB probe, which warns on older TBB installs
    numba.config.THREADING_LAYER = "omp"

LINEAR = 0
TABLE = 1

INTEGRATED = "integrated"
SAMPLED = "sampled"

MAX_ABORT_FRACTION = 1e-4

_GOLDEN = 0x9E3779B97F4A7C15
_PATH_MIX = 0xD1B54A32D192ED03
_STEP_MIX = 0xA0761D6478BD642F
_INV_2_53 = 1.0 / 9007199254740992.0


# ---------------------------------------------------------------------------
# random numbers


@numba.njit(inline="always", cache=True)
def _rotl(x, k):
    return (x << uint64(k)) | (x >> uint64(64 - k))


@numba.njit(inline="always", cache=True)
def _splitmix(x):
    x = x + uint64(_GOLDEN)
    z = x
    z = (z ^ (z >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> uint64(27))) * uint64(0x94D049BB133111EB)
    return x, z ^ (z >> uint64(31))


@numba.njit(cache=True)
def _seed_state(seed, path, state):
    x = uint64(seed) ^ (uint64(path) * uint64(_PATH_MIX))
    for i in range(4):
        x, z = _splitmix(x)
        state[i] = z


@numba.njit(inline="always", cache=True)
def _next_uniform(s):
    result = _rotl(s[1] * uint64(5), 7) * uint64(9)
    t = s[1] << uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return (result >> uint64(11)) * _INV_2_53


@numba.njit(inline="always", cache=True)
def _next_normal(s):
    # Marsaglia polar method; the second variate is discarded so each step uses one call
    while True:
        u = 2.0 * _next_uniform(s) - 1.0
        v = 2.0 * _next_uniform(s) - 1.0
        q = u * u + v * v
        if 0.0 < q < 1.0:
            return u * math.sqrt(-2.0 * math.log(q) / q)


@numba.njit(inline="always", cache=True)
def _hashed_uniform(seed, path, step):
    # counter-based, so drawing it does not shift the path's normal stream
    x = uint64(seed) ^ (uint64(path) * uint64(_PATH_MIX)) ^ (uint64(step) * uint64(_STEP_MIX))
    x, z = _splitmix(x)
    x, z = _splitmix(z)
    return (z >> uint64(11)) * _INV_2_53


# ---------------------------------------------------------------------------
# strategies


@numba.njit(inline="always", cache=True)
def _strategy(w, m, kind, scale, c0, c1, m_lo, m_hi, table, alpha, safe):
    if kind == LINEAR or m >= safe:
        v = c0 + c1 * w
    else:
        n_m, n_s = table.shape
        span = m - alpha * m
        s = (w - alpha * m) / span if span > 0 else 0.0
        s = min(max(s, 0.0), 1.0) * (n_s - 1)
        j = min(int(s), n_s - 2)
        fs = s - j
        if n_m == 1 or m_hi <= m_lo:
            v = table[0, j] * (1 - fs) + table[0, j + 1] * fs
        else:
            x = (min(max(m, m_lo), m_hi) - m_lo) / (m_hi - m_lo) * (n_m - 1)
            i = min(int(x), n_m - 2)
            fm = x - i
            lo = table[i, j] * (1 - fs) + table[i, j + 1] * fs
            hi = table[i + 1, j] * (1 - fs) + table[i + 1, j + 1] * fs
            v = lo * (1 - fm) + hi * fm
    return max(v, 0.0) * scale


@dataclass(frozen=True)
class Strategy:
    """Feedback map (w, m) -> dollars in the risky asset, in a form the kernel can evaluate.

    ``LINEAR``: max(c0 + c1 w, 0). ``TABLE``: bilinear interpolation on a
    uniform grid in m over [m_lo, m_hi] and in s = (w - alpha m)/(m - alpha m)
    over [0, 1], falling back to the linear part for m >= c/r. The result is
    multiplied by ``scale``.
    """

    kind: int
    c0: float = 0.0
    c1: float = 0.0
    scale: float = 1.0
    m_lo: float = 0.0
    m_hi: float = 0.0
    table: np.ndarray = field(default_factory=lambda: np.zeros((1, 2)), repr=False)
    name: str = ""

    @classmethod
    def linear(cls, c0: float, c1: float, name: str = "linear") -> "Strategy":
        return cls(LINEAR, c0=c0, c1=c1, name=name)

    @classmethod
    def zero(cls) -> "Strategy":
        return cls(LINEAR, name="zero")

    @classmethod
    def ruin(cls, p: MarketParams) -> "Strategy":
        """The investment rule minimizing the probability of lifetime ruin at level alpha*m."""
        k = derive_constants(p)
        slope = risk_loading(p) / (k.gamma - 1)
        return cls(LINEAR, c0=slope * k.safe_level, c1=-slope, name="ruin")

    @classmethod
    def tabulate(cls, fn, p: MarketParams, m_lo: float, m_hi: float | None = None, n_m: int = 401,
                 n_s: int = 401, name: str = "table") -> "Strategy":
        """Sample fn(w_array, m) on the (m, s) grid; m >= c/r uses the ruin rule."""
        k = derive_constants(p)
        safe = k.safe_level
        m_hi = safe if m_hi is None else min(m_hi, safe)
        ruin = cls.ruin(p)
        if m_lo >= safe:
            return ruin
        ms = np.array([m_lo]) if m_hi <= m_lo else np.linspace(m_lo, m_hi, n_m)
        s = np.linspace(0.0, 1.0, n_s)
        table = np.empty((len(ms), n_s))
        for i, m in enumerate(ms):
            w = p.alpha * m + s * (min(m, safe) - p.alpha * m)
            table[i] = fn(w, float(m))
        return cls(TABLE, c0=ruin.c0, c1=ruin.c1, m_lo=float(ms[0]), m_hi=float(ms[-1]), table=table, name=name)

    @classmethod
    def from_surface(cls, surface, m0: float, **kw) -> "Strategy":
        kw.setdefault("name", "optimal")
        return cls.tabulate(surface.pi_star, surface.params, m0, **kw)

    def scaled(self, factor: float, name: str | None = None) -> "Strategy":
        return Strategy(self.kind, self.c0, self.c1, self.scale * factor, self.m_lo, self.m_hi, self.table,
                        name or f"{factor:g}x{self.name}")

    def __call__(self, w, m, p: MarketParams):
        safe = p.c / p.r
        w = np.asarray(w, dtype=float)
        out = np.array([
            _strategy(float(wi), float(m), self.kind, self.scale, self.c0, self.c1, self.m_lo, self.m_hi,
                      self._table(), p.alpha, safe)
            for wi in w.ravel()
        ]).reshape(w.shape)
        return float(out) if out.ndim == 0 else out

    def _table(self):
        return np.ascontiguousarray(self.table, dtype=np.float64)


# ---------------------------------------------------------------------------
# kernel


@numba.njit(parallel=True, cache=True)
def _simulate_paths(n_paths, seed, w0, m0, alpha, safe, r, mu, sigma, c, lam, dt, horizon, sampled, bridge,
                    kind, scale, c0, c1, m_lo, m_hi, table, scores, status, m_max):
    sq = math.sqrt(dt)
    max_steps = int(math.ceil(horizon / dt))
    for path in prange(n_paths):
        state = np.empty(4, dtype=np.uint64)
        _seed_state(seed, path, state)
        death = math.inf
        if sampled:
            death = -math.log(1.0 - _next_uniform(state)) / lam
        w = w0
        m = m0
        score = 0.0
        flag = 0
        if w <= alpha * m:
            score = 1.0
            flag = 1
        elif w < safe:
            t = 0.0
            for step in range(1, max_steps + 1):
                pi = _strategy(w, m, kind, scale, c0, c1, m_lo, m_hi, table, alpha, safe)
                sd = sigma * pi * sq
                w_next = w + (r * w + (mu - r) * pi - c) * dt + sd * _next_normal(state)
                t = step * dt
                if sampled and t > death:
                    break
                if not math.isfinite(w_next):
                    flag = 2
                    break
                barrier = alpha * m
                hit = w_next <= barrier
                if not hit and bridge and sd > 0.0:
                    # probability the Brownian bridge between the two grid values touched the barrier
                    x = -2.0 * (w - barrier) * (w_next - barrier) / (sd * sd)
                    if x > -40.0:
                        hit = _hashed_uniform(seed, path, step) < math.exp(x)
                if hit:
                    score = 1.0 if sampled else math.exp(-lam * t)
                    flag = 1
                    break
                if w_next >= safe:
                    break
                w = w_next
                if w > m:
                    m = w
        scores[path] = score
        status[path] = flag
        m_max[path] = m


# ---------------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo run description.

    ``horizon`` defaults to 200/lambda. ``mortality`` is ``"integrated"``
    (weight exp(-lam t) at drawdown, paths run to the horizon) or
    ``"sampled"`` (draw the death time first and stop there). ``bridge``
    adds the Brownian-bridge barrier-crossing test inside each step.
    """

    dt: float = 1e-3
    n_paths: int = 100_000
    master_seed: int = 20240601
    horizon: float | None = None
    mortality: str = INTEGRATED
    bridge: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be at least 1, got {self.n_paths}")
        if self.mortality not in (INTEGRATED, SAMPLED):
            raise ValueError(f"mortality must be '{INTEGRATED}' or '{SAMPLED}', got {self.mortality!r}")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in 64 unsigned bits")

    def horizon_for(self, p: MarketParams) -> float:
        return 200.0 / p.lam if self.horizon is None else float(self.horizon)


@dataclass
class SimResult:
    estimate: float
    std_error: float
    n_paths: int
    n_drawdown: int
    aborted: int
    truncation_bound: float
    dt: float
    horizon: float
    mortality: str
    bridge: bool
    max_excess: float  # largest running maximum reached minus m0
    scores: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "dt": self.dt,
            "horizon": self.horizon,
            "aborted": self.aborted,
            "truncation_bound": self.truncation_bound,
            "n_drawdown": self.n_drawdown,
            "mortality": self.mortality,
            "bridge": self.bridge,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _apply_thread_cap():
    cap = os.environ.get("DRAWDOWN_THREADS")
    if cap:
        numba.set_num_threads(max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS)))


def simulate(strategy: Strategy, w0: float, m0: float, p: MarketParams, config: SimConfig) -> SimResult:
    """Estimate the drawdown probability from (w0, m0) under ``strategy``."""
    k = derive_constants(p)
    safe = k.safe_level
    if not (p.alpha * m0 <= w0 <= min(m0, safe) or (m0 >= safe and p.alpha * m0 <= w0 <= safe)):
        raise ValueError(f"(w0, m0) = ({w0}, {m0}) outside the domain")
    horizon = config.horizon_for(p)
    if horizon < 50.0 / p.lam:
        log.warning("horizon %.3g is below 50/lambda; truncation bias up to %.3g", horizon, math.exp(-p.lam * horizon))
    _apply_thread_cap()
    n = int(config.n_paths)
    scores = np.zeros(n)
    status = np.zeros(n, dtype=np.int8)
    m_max = np.zeros(n)
    _simulate_paths(
        n, np.uint64(config.master_seed), float(w0), float(m0), p.alpha, safe, p.r, p.mu, p.sigma, p.c, p.lam,
        float(config.dt), horizon, config.mortality == SAMPLED, bool(config.bridge),
        strategy.kind, float(strategy.scale), float(strategy.c0), float(strategy.c1), float(strategy.m_lo),
        float(strategy.m_hi), strategy._table(), scores, status, m_max,
    )
    aborted = int(np.sum(status == 2))
    if aborted > MAX_ABORT_FRACTION * n:
        raise SimulationError(f"{aborted} of {n} paths produced non-finite wealth")
    good = status != 2
    kept = scores[good]
    mean = float(np.sum(kept) / kept.size)
    var = float(np.sum((kept - mean) ** 2) / max(kept.size - 1, 1))
    return SimResult(
        estimate=mean,
        std_error=math.sqrt(var / kept.size),
        n_paths=n,
        n_drawdown=int(np.sum(status == 1)),
        aborted=aborted,
        truncation_bound=math.exp(-p.lam * horizon),
        dt=float(config.dt),
        horizon=horizon,
        mortality=config.mortality,
        bridge=bool(config.bridge),
        max_excess=float(np.max(m_max[good]) - m0) if kept.size else 0.0,
        scores=np.where(good, scores, np.nan),
    )


@dataclass
class StrategyComparison:
    results: dict

    def paired_difference(self, first: str, second: str) -> tuple[float, float]:
        """Mean and standard error of score(second) - score(first) over common paths."""
        a, b = self.results[first].scores, self.results[second].scores
        ok = np.isfinite(a) & np.isfinite(b)
        d = b[ok] - a[ok]
        return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size))

    def to_dict(self) -> dict:
        return {name: r.to_dict() for name, r in self.results.items()}


def compare_strategies(w0: float, m0: float, strategies, p: MarketParams, config: SimConfig) -> StrategyComparison:
    """Run every strategy on the same random numbers (path i sees the same increments)."""
    if isinstance(strategies, dict):
        items = strategies.items()
    else:
        items = ((s.name, s) for s in strategies)
    return StrategyComparison({name: simulate(s, w0, m0, p, config) for name, s in items})
