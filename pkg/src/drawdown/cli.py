"""Command-line front end.

    drawdown constants [--config FILE | --preset NAME] [--mu ...]
    drawdown mstar     [--output z_curve.csv]
    drawdown eval      --w W --m M
    drawdown figures   [--which 1 2 ...] [--outdir DIR]
    drawdown verify    [--perturb AMPLITUDE]
    drawdown simulate  --w W --m M [--strategy optimal|ruin|zero] [--compare]

Exit codes: 0 success, 1 a checked property failed, 2 bad usage or
parameters, 3 a solver did not converge.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .controller_stopper import m_hat, restricted_dual
from .errors import ConvergenceError, DomainError, ParameterError, ShootingError, SimulationError
from .figures import FIGURES, write_figures
from .market import BASELINE, HIGH_DRIFT, MarketParams, derive_constants

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_NO_CONVERGENCE = 3

PRESETS = {"baseline": BASELINE, "high-drift": HIGH_DRIFT}
REGIME_TAGS = {"closed": "above_safe", "free_boundary": "free_boundary", "restricted": "restricted"}
_OVERRIDES = (("mu", "mu"), ("sigma", "sigma"), ("r", "r"), ("c", "c"), ("lambda", "lam"), ("alpha", "alpha"))

log = logging.getLogger("drawdown")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration


def load_params(args) -> MarketParams:
    """Parameters from --config or --preset (baseline when neither), then flag overrides."""
    if args.config and args.preset:
        raise UsageError("give either --config or --preset, not both")
    if args.config:
        params = MarketParams.from_json(args.config)
    else:
        params = PRESETS[args.preset or "baseline"]
    changes = {field: getattr(args, flag) for flag, field in _OVERRIDES if getattr(args, flag) is not None}
    return replace(params, **changes) if changes else params


def step_control(args) -> dict:
    sc = {}
    for name in ("rtol", "atol"):
        value = getattr(args, name)
        if value is not None:
            if not value > 0:
                raise UsageError(f"--{name} must be positive")
            sc[name] = value
    return sc


def build_surface(args, params):
    from .surface import ValueSurface

    return ValueSurface(params, step_control=step_control(args))


def emit(payload, args) -> None:
    text = json.dumps(payload, indent=2, default=_json_default)
    if getattr(args, "output", None) and args.command not in ("mstar",):
        Path(args.output).write_text(text + "\n")
    print(text)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


# ---------------------------------------------------------------------------
# commands


def cmd_constants(args, params) -> int:
    k = derive_constants(params)
    emit({"params": params.to_dict(), **asdict(k)}, args)
    return EXIT_OK


def cmd_mstar(args, params) -> int:
    from .free_boundary import shoot

    k = derive_constants(params)
    if params.alpha == 0:
        print("free-boundary regime empty, ruin closed form applies")
        return EXIT_OK
    try:
        curve = shoot(k, params, step_control=step_control(args))
    except ShootingError as exc:
        dump = Path(args.output or "z_curve.csv").with_suffix(".failed.csv")
        np.savetxt(dump, np.asarray(exc.trajectory), delimiter=",", header="m,z", comments="", fmt="%.17g")
        print(f"shooting failed: {exc}; trajectory written to {dump}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    out = Path(args.output or "z_curve.csv")
    curve.to_csv(out)
    mh = m_hat(k, params)
    ok = 0 < curve.m_star < mh < k.safe_level
    emit({
        "m_star": curve.m_star,
        "m_hat": mh,
        "m_star_extrapolated": curve.m_star_extrapolated,
        "eps_estimates": {f"{e:g}": v for e, v in curve.eps_estimates.items()},
        "m_star_below_m_hat": ok,
        "curve_file": str(out),
    }, args)
    return EXIT_OK if ok else EXIT_FAILED


def cmd_eval(args, params) -> int:
    surface = build_surface(args, params)
    w, m = args.w, args.m
    regime = surface.regime(m)
    y = None if regime == "closed" else float(surface.invert_dual(w, m))
    emit({
        "w": w,
        "m": m,
        "phi": float(surface.phi(w, m)),
        "pi_star": float(surface.pi_star(w, m)),
        "regime": REGIME_TAGS[regime],
        "y": y,
    }, args)
    return EXIT_OK


def cmd_figures(args, params) -> int:
    surface = build_surface(args, params)
    which = args.which or list(FIGURES)
    paths = write_figures(surface, args.outdir, which)
    emit({"m_star": surface.m_star, "files": [str(p) for p in paths]}, args)
    return EXIT_OK


def oracle_comparison(surface, n_points: int = 5, grid_size: int = 2000) -> dict:
    """Max difference between the finite-difference oracle and the closed-form restricted value."""
    from .verification import restricted_bvp_oracle

    k, p = surface.constants, surface.params
    rows = []
    for m in np.linspace(surface.m_star, 0.0, n_points + 2)[1:-1][::-1]:
        sol = restricted_bvp_oracle(float(m), k, p, grid_size=grid_size)
        exact = restricted_dual(float(m), k, p).primal(sol.w)
        rows.append({"m": float(m), "max_error": float(np.max(np.abs(sol.h - exact))),
                     "iterations": sol.iterations})
    return {"grid_size": grid_size, "points": rows, "max_error": max(r["max_error"] for r in rows)}


def cmd_verify(args, params) -> int:
    from .verification import PerturbedSurface, check_hjb_conditions, strategy_shape_suite

    surface = build_surface(args, params)
    target = PerturbedSurface(surface, args.perturb) if args.perturb else surface
    hjb = check_hjb_conditions(target, n_m=args.grid, n_w=args.grid, tol=args.tol)
    report = {"m_star": surface.m_star, "hjb": hjb.to_dict()}
    passed = hjb.passed
    if not args.perturb:
        props = strategy_shape_suite(surface)
        report["strategy_shape"] = props.to_dict()
        passed &= props.passed
        if surface.m_star > 0:
            oracle = oracle_comparison(surface)
            oracle["pass"] = oracle["max_error"] <= 1e-3
            report["oracle"] = oracle
            passed &= oracle["pass"]
    report["pass"] = bool(passed)
    emit(report, args)
    return EXIT_OK if passed else EXIT_FAILED


def _named_strategy(name, surface, m0, params):
    from .montecarlo import Strategy

    base, _, factor = name.partition("*")
    if base == "optimal":
        s = Strategy.from_surface(surface, m0)
    elif base == "ruin":
        s = Strategy.ruin(params)
    elif base == "zero":
        s = Strategy.zero()
    else:
        raise UsageError(f"unknown strategy {name!r}; use optimal, ruin or zero, optionally followed by *FACTOR")
    if factor:
        try:
            s = s.scaled(float(factor), name=name)
        except ValueError as exc:
            raise UsageError(f"bad scale factor in {name!r}") from exc
    return replace(s, name=name)


def cmd_simulate(args, params) -> int:
    from .montecarlo import SimConfig, compare_strategies, simulate

    config = SimConfig(dt=args.dt, n_paths=args.paths, master_seed=args.seed, horizon=args.horizon,
                       mortality=args.mortality, bridge=not args.no_bridge)
    names = ["optimal", "optimal*0.8", "optimal*1.2", "ruin"] if args.compare else [args.strategy]
    surface = build_surface(args, params) if any(n.startswith("optimal") for n in names) else None
    strategies = {n: _named_strategy(n, surface, args.m, params) for n in names}
    if len(strategies) == 1:
        (name, s), = strategies.items()
        result = simulate(s, args.w, args.m, params, config)
        payload = {"strategy": name, **result.to_dict(), "target": _target(surface, params, args.w, args.m, name)}
        emit(payload, args)
        return EXIT_OK
    table = compare_strategies(args.w, args.m, strategies, params, config)
    rows = {}
    worse = True
    for name, res in table.results.items():
        row = res.to_dict()
        if name != names[0]:
            diff, se = table.paired_difference(names[0], name)
            row["difference_vs_optimal"] = diff
            row["difference_std_error"] = se
            worse &= diff >= -3 * se
        rows[name] = row
    emit({"w": args.w, "m": args.m, "strategies": rows, "optimal_not_beaten": bool(worse)}, args)
    return EXIT_OK if worse else EXIT_FAILED


def _target(surface, params, w, m, name):
    """Closed-form value for the two strategies that have one."""
    from .closed_region import phi_above_safe

    k = derive_constants(params)
    if name == "ruin" and m >= k.safe_level:
        return float(phi_above_safe(w, m, k, params))
    if name == "optimal" and surface is not None:
        return float(surface.phi(w, m))
    return None


# ---------------------------------------------------------------------------
# parser


def _positive(kind):
    def parse(text):
        value = kind(text)
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_argument_group("parameters")
    src.add_argument("--config", help="JSON file with mu, sigma, r, c, lambda, alpha")
    src.add_argument("--preset", choices=sorted(PRESETS), help="built-in parameter set (default: baseline)")
    for flag, _ in _OVERRIDES:
        src.add_argument(f"--{flag}", type=float, help=f"override {flag}")
    tol = common.add_argument_group("solver")
    tol.add_argument("--rtol", type=float, help="relative tolerance of the ODE integration")
    tol.add_argument("--atol", type=float, help="absolute tolerance of the ODE integration")
    common.add_argument("--output", help="also write the JSON report (or the curve CSV for mstar) here")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="drawdown", description="Minimum probability of lifetime drawdown.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("constants", parents=[common], help="print the derived constants")
    sub.add_parser("mstar", parents=[common], help="solve for the critical high-water mark and write z(m)")

    p_eval = sub.add_parser("eval", parents=[common], help="evaluate phi and pi* at one state")
    p_eval.add_argument("--w", type=float, required=True)
    p_eval.add_argument("--m", type=_positive(float), required=True)

    p_fig = sub.add_parser("figures", parents=[common], help="write figure data as CSV")
    p_fig.add_argument("--which", type=int, nargs="+", choices=FIGURES)
    p_fig.add_argument("--outdir", default="figures")

    p_ver = sub.add_parser("verify", parents=[common], help="run the verification suites")
    p_ver.add_argument("--grid", type=_positive(int), default=200, help="points per axis of the HJB grid")
    p_ver.add_argument("--tol", type=_positive(float), default=1e-5)
    p_ver.add_argument("--perturb", type=_positive(float), help="check a bumped surface instead (negative control)")

    p_sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo estimate of the drawdown probability")
    p_sim.add_argument("--w", type=float, required=True)
    p_sim.add_argument("--m", type=_positive(float), required=True)
    p_sim.add_argument("--strategy", default="optimal", help="optimal, ruin or zero, optionally '*FACTOR'")
    p_sim.add_argument("--compare", action="store_true", help="optimal vs 0.8x, 1.2x and ruin on common paths")
    p_sim.add_argument("--dt", type=_positive(float), default=1e-3)
    p_sim.add_argument("--paths", type=_positive(int), default=100_000)
    p_sim.add_argument("--seed", type=int, default=20240601)
    p_sim.add_argument("--horizon", type=_positive(float))
    p_sim.add_argument("--mortality", choices=("integrated", "sampled"), default="integrated")
    p_sim.add_argument("--no-bridge", action="store_true", help="disable the in-step barrier test")
    return parser


COMMANDS = {
    "constants": cmd_constants,
    "mstar": cmd_mstar,
    "eval": cmd_eval,
    "figures": cmd_figures,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        params = load_params(args)
        return COMMANDS[args.command](args, params)
    except (UsageError, ParameterError, DomainError, ValueError, OSError) as exc:
        print(f"drawdown: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"drawdown: did not converge: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except SimulationError as exc:
        print(f"drawdown: simulation failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
