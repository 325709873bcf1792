"""Black-Scholes market with constant consumption and exponential lifetime.

Holds the six model primitives and the constants every other module derives
from them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ParameterError

JSON_FIELDS = ("mu", "sigma", "r", "c", "lambda", "alpha")


@dataclass(frozen=True)
class MarketParams:
    """Model primitives, all in per-year units.

    Attributes:
        mu: drift of the risky asset.
        sigma: volatility of the risky asset.
        r: riskless rate.
        c: consumption rate (currency per year).
        lam: hazard rate of the exponential death time.
        alpha: drawdown fraction; drawdown occurs when wealth hits alpha * max wealth.
    """

    mu: float
    sigma: float
    r: float
    c: float
    lam: float
    alpha: float

    def __post_init__(self):
        for name in ("mu", "sigma", "r", "c", "lam", "alpha"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ParameterError(f"{name} must be a finite number, got {value!r}")
            object.__setattr__(self, name, float(value))
        validate(self)

    @property
    def safe_level(self) -> float:
        return self.c / self.r

    @classmethod
    def from_dict(cls, data: dict) -> "MarketParams":
        missing = [k for k in JSON_FIELDS if k not in data]
        if missing:
            raise ParameterError(f"missing parameter field(s): {', '.join(missing)}")
        extra = sorted(set(data) - set(JSON_FIELDS))
        if extra:
            raise ParameterError(f"unknown parameter field(s): {', '.join(extra)}")
        return cls(
            mu=data["mu"],
            sigma=data["sigma"],
            r=data["r"],
            c=data["c"],
            lam=data["lambda"],
            alpha=data["alpha"],
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "MarketParams":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParameterError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ParameterError(f"{path}: expected a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "sigma": self.sigma,
            "r": self.r,
            "c": self.c,
            "lambda": self.lam,
            "alpha": self.alpha,
        }


def validate(p: MarketParams) -> None:
    """Raise ParameterError naming the first violated admissibility bound."""
    if not p.r > 0:
        raise ParameterError(f"riskless rate must satisfy r > 0, got r={p.r}")
    if not p.mu > p.r:
        raise ParameterError(f"drift must satisfy mu > r, got mu={p.mu}, r={p.r}")
    if not p.sigma > 0:
        raise ParameterError(f"volatility must satisfy sigma > 0, got sigma={p.sigma}")
    if not p.c > 0:
        raise ParameterError(f"consumption must satisfy c > 0, got c={p.c}")
    if not p.lam > 0:
        raise ParameterError(f"hazard rate must satisfy lambda > 0, got lambda={p.lam}")
    if not 0 <= p.alpha < 1:
        raise ParameterError(f"drawdown fraction must satisfy 0 <= alpha < 1, got alpha={p.alpha}")


@dataclass(frozen=True)
class DerivedConstants:
    """Constants shared by the closed forms and the dual free-boundary problems.

    ``b1`` and ``b2`` are the roots of delta*B^2 - (r - lam + delta)*B - lam = 0;
    ``gamma`` is the exponent of the ruin-probability closed form, and
    b1 = gamma / (gamma - 1).
    """

    delta: float
    gamma: float
    b1: float
    b2: float
    safe_level: float


def derive_constants(p: MarketParams) -> DerivedConstants:
    validate(p)
    delta = 0.5 * ((p.mu - p.r) / p.sigma) ** 2
    # gamma - 1 is the positive root of r g^2 + (r - lam - delta) g - delta = 0
    e = p.r - p.lam - delta
    root = math.sqrt(e * e + 4.0 * p.r * delta)
    g = (root - e) / (2.0 * p.r) if e <= 0 else 2.0 * delta / (root + e)
    gamma = 1.0 + g
    t = p.r - p.lam + delta
    q = math.sqrt(t * t + 4.0 * p.lam * delta)
    # pick the cancellation-free form for each root; their product is -lam/delta
    if t >= 0:
        b1 = (t + q) / (2.0 * delta)
        b2 = -p.lam / (delta * b1)
    else:
        b2 = (t - q) / (2.0 * delta)
        b1 = -p.lam / (delta * b2)
    return DerivedConstants(delta=delta, gamma=gamma, b1=b1, b2=b2, safe_level=p.c / p.r)


def risk_loading(p: MarketParams) -> float:
    """(mu - r) / sigma^2, the factor converting -y*phi_yy into dollars in the risky asset."""
    return (p.mu - p.r) / p.sigma**2


# The two parameter sets used throughout the numerical examples.
BASELINE = MarketParams(mu=0.06, sigma=0.20, r=0.04, c=1.0, lam=0.04, alpha=0.5)
HIGH_DRIFT = replace(BASELINE, mu=0.12)
