import csv
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drawdown.controller_stopper import m_hat, solve_x, y_boundaries
from drawdown.errors import FormSwitch
from drawdown.free_boundary import (
    DomainD0,
    OdeCoefficients,
    abel_rhs,
    boundary_check,
    classify,
    comparison_curves,
    crossing_function,
    extrapolate_m_star,
    lower_curve,
    ode_rhs,
    reference_m_star,
    shoot,
    terminal_y_alpha,
    trace_arclength,
    y_alpha_tilde,
)
from drawdown.market import BASELINE, HIGH_DRIFT, derive_constants

SETS = {"baseline": BASELINE, "high_drift": HIGH_DRIFT}
# crossing of the eps = 1e-7 run; the arc-length integration reproduces it to ~1e-6
M_STAR = {"baseline": 15.06507562461547, "high_drift": 2.491555673093885}


@pytest.fixture(scope="module", params=list(SETS))
def case(request):
    p = SETS[request.param]
    k = derive_constants(p)
    return request.param, p, k, shoot(k, p)


def test_m_star_reference(case):
    name, p, k, curve = case
    assert curve.m_star == pytest.approx(M_STAR[name], rel=1e-9)
    assert 0 < curve.m_star < m_hat(k, p) < k.safe_level
    assert curve.m_star == pytest.approx(reference_m_star(k, p), abs=1e-5 * k.safe_level)


def test_eps_robustness(case):
    _, _, k, curve = case
    est = curve.eps_estimates
    assert abs(est[1e-4] - est[1e-5]) <= 1e-4 * k.safe_level
    assert abs(curve.m_star_extrapolated - curve.m_star) <= 1e-8 * k.safe_level


def test_curve_meets_lower_edge_and_boundaries_agree(case):
    _, p, k, curve = case
    assert curve.z(curve.m_star) == pytest.approx(1 / solve_x(curve.m_star, k, p), rel=1e-9)
    assert boundary_check(curve) <= 1e-6
    assert curve.y_alpha_m(curve.m_star) == pytest.approx(y_boundaries(curve.m_star, k, p).y_alpha_m, rel=1e-6)


def test_curve_inside_domain(case):
    _, p, k, curve = case
    for m, z in curve.nodes:
        assert lower_curve(m, k, p) * (1 - 1e-9) <= z <= 1.0
    assert curve.z(k.safe_level) == 0.0


def test_terminal_limit(case):
    _, p, k, curve = case
    limit = terminal_y_alpha(k, p)
    assert limit == pytest.approx(k.b1 / ((k.b1 - 1) * (1 - p.alpha) * k.safe_level))
    assert curve.y_alpha_m(k.safe_level * (1 - 1e-6)) == pytest.approx(limit, rel=1e-3)
    assert y_boundaries(k.safe_level * (1 - 1e-10), k, p).y_alpha_m == pytest.approx(limit, rel=1e-6)


def test_baseline_terminal_limit_value(k1):
    assert terminal_y_alpha(k1, BASELINE) == pytest.approx(0.11372281323269014, rel=1e-13)


def test_y_alpha_tilde_solves_linear_relation(case):
    _, p, k, curve = case
    b1, b2, safe, a = k.b1, k.b2, k.safe_level, p.alpha
    for m in np.linspace(curve.m_star, safe * 0.99, 7):
        z = curve.z(m)
        ya = y_alpha_tilde(m, z, k, p)
        # f'(y_m) = m for the dual built on [z ya, ya]
        span = (safe - a * m) * ya
        A = (b2 + span * (1 - b2)) / (b1 - b2)
        C = (b1 - span * (b1 - 1)) / (b1 - b2)
        slope = safe - (A * b1 * z ** (b1 - 1) - C * b2 * z ** (b2 - 1)) / ya
        assert slope == pytest.approx(m, rel=1e-10)


def test_squeezed_between_comparison_curves(case):
    _, p, k, curve = case
    below, above = comparison_curves(k, p)
    mh = m_hat(k, p)
    assert below.m_tilde < mh and above.m_tilde < mh
    lo = max(below.m_tilde, above.m_tilde, curve.m_star) + 1e-3
    for m in np.linspace(lo, k.safe_level * 0.99, 15):
        zb, zc, za = below.z(m), curve.z(m), above.z(m)
        # the integrations carry ~1e-11 error, so ordering is checked up to that noise
        assert zb - 1e-10 < zc < za + 1e-10


def test_to_csv(case, tmp_path):
    _, _, k, curve = case
    path = tmp_path / "z.csv"
    curve.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["m", "z", "y_m", "y_alpha_m"]
    data = np.array(rows[1:], dtype=float)
    np.testing.assert_array_equal(data[:, :2], curve.nodes)
    assert data[0, 0] == curve.m_star and data[-1, 0] == k.safe_level


def test_zero_alpha_curve_is_ruin_case():
    p = replace(BASELINE, alpha=0.0)
    k = derive_constants(p)
    curve = shoot(k, p)
    assert curve.m_star == 0.0
    for m in (2.0, 10.0, 20.0):
        assert curve.z(m) == pytest.approx((1 - m / 25) ** (k.gamma - 1), rel=1e-9)


# -- coefficients and the two forms of the ODE ---------------------------


@pytest.mark.parametrize("name", SETS)
def test_denominator_vanishes_on_lower_edge(name):
    p = SETS[name]
    k = derive_constants(p)
    coef = OdeCoefficients(k, p)
    for m in np.linspace(0.01, 24.9, 100):
        z = lower_curve(m, k, p)
        _, big_h, _, scale_h = coef.both(m, z)
        assert abs(big_h) <= 1e-9 * scale_h


@pytest.mark.parametrize("name", SETS)
def test_numerator_vanishes_on_xi_curve(name):
    p = SETS[name]
    k = derive_constants(p)
    coef = OdeCoefficients(k, p)
    mh = m_hat(k, p)
    for z in np.linspace(0.01, 0.99, 100):
        m = coef.xi(z)
        big_g, _, scale_g, _ = coef.both(m, z)
        assert abs(big_g) <= 1e-9 * scale_g
        assert m <= mh * (1 + 1e-9)
    # the two curves meet at the interior singular point
    z_hat = lower_curve(mh, k, p)
    assert coef.xi(z_hat) == pytest.approx(mh, rel=1e-8)


def test_coefficients_at_top(k1):
    g0, g1, h0, h1, h2 = OdeCoefficients(k1, BASELINE)(1.0)
    assert g0 == 0.0 and g1 == 0.0
    # only h0 survives at z = 1: H(m, 1) = ((1 - alpha) (B1 - B2) m)^2
    for m in (3.0, 17.0):
        expected = ((1 - 0.5) * (k1.b1 - k1.b2) * m) ** 2
        assert OdeCoefficients(k1, BASELINE).denominator(m, 1.0) == pytest.approx(expected, rel=1e-12)


def test_form_switch_signals(k1):
    m = 20.0
    z = lower_curve(m, k1, BASELINE)
    with pytest.raises(FormSwitch):
        ode_rhs(m, z, k1, BASELINE)
    assert np.isfinite(abel_rhs(z, m, k1, BASELINE))
    zx = 0.5
    with pytest.raises(FormSwitch):
        abel_rhs(zx, OdeCoefficients(k1, BASELINE).xi(zx), k1, BASELINE)


def test_interior_point_reciprocal(k1):
    assert ode_rhs(20.0, 0.5, k1, BASELINE) * abel_rhs(0.5, 20.0, k1, BASELINE) == pytest.approx(1.0, rel=1e-12)


def test_reciprocal_identity_random_points(k1):
    rng = np.random.default_rng(11)
    checked = 0
    for m, s in rng.uniform(0, 1, size=(10_000, 2)):
        m *= 25.0
        lo = lower_curve(m, k1, BASELINE)
        z = lo + s * (1 - lo)
        try:
            prod = ode_rhs(m, z, k1, BASELINE) * abel_rhs(z, m, k1, BASELINE)
        except FormSwitch:
            continue
        assert prod == pytest.approx(1.0, rel=1e-10)
        checked += 1
    assert checked > 9000


def test_crossing_function_sign(k1):
    for m in (3.0, 12.0, 22.0):
        z = lower_curve(m, k1, BASELINE)
        assert abs(crossing_function(m, z, k1, BASELINE)) <= 1e-12 * 25
        assert crossing_function(m, 0.5 * (z + 1), k1, BASELINE) < 0
        assert crossing_function(m, 0.5 * z, k1, BASELINE) > 0


# -- domain classification -------------------------------------------------


def test_classify_tags(k1):
    d = DomainD0(k1, BASELINE)
    mh = d.m_hat
    assert d.classify(mh, lower_curve(mh, k1, BASELINE))[0] == "singular"
    assert d.classify(25.0, 1e-5)[0] == "singular"
    assert d.classify(25.0, 0.5)[0] == "right"
    assert d.classify(10.0, 1.0)[0] == "upper"
    assert d.classify(20.0, lower_curve(20.0, k1, BASELINE))[0] == "lower"
    assert d.classify(5.0, lower_curve(5.0, k1, BASELINE))[0] == "left"
    assert d.classify(20.0, 0.5 * lower_curve(20.0, k1, BASELINE))[0] == "outside"
    assert d.classify(30.0, 0.5)[0] == "outside"
    assert classify(20.0, 0.7, k1, BASELINE)[0] == "interior"


def test_classify_sign_matches_direct_evaluation(k1):
    coef = OdeCoefficients(k1, BASELINE)
    for m, z in [(20.0, 0.7), (10.0, 0.9), (5.0, 0.95), (24.0, 0.3)]:
        tag, sign = classify(m, z, k1, BASELINE)
        big_g, big_h, _, _ = coef.both(m, z)
        assert tag == "interior"
        assert sign == np.sign(big_g * big_h)
        # H > 0 strictly above the lower edge
        assert big_h > 0


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(1e-3, 1 - 1e-3))
def test_membership_matches_definition(s, frac):
    k = derive_constants(BASELINE)
    d = DomainD0(k, BASELINE)
    m = 25.0 * frac
    lo = lower_curve(m, k, BASELINE)
    z = s * 1.2
    assert d.contains(m, z) == (lo <= z <= 1.0)


# -- integral curves ---------------------------------------------------------


def test_uniqueness_through_interior_point(k1):
    a = trace_arclength(k1, BASELINE, 22.0, 0.5)
    b = trace_arclength(k1, BASELINE, 22.0, 0.5, rtol=1e-9, atol=1e-11)
    assert a.m_tilde == pytest.approx(b.m_tilde, abs=1e-6)
    for m in (21.0, 19.0, 17.0):
        assert a.z(m) == pytest.approx(b.z(m), abs=1e-6)


def test_launches_from_edges_end_on_left_edge(surface):
    from drawdown.figures import integral_curve_launches

    k, p = surface.constants, surface.params
    mh = m_hat(k, p)
    for m0, z0 in integral_curve_launches(surface):
        end = trace_arclength(k, p, m0, z0)
        assert end.m_tilde < mh


def test_aitken_extrapolation():
    values = [2.0 + 0.1**n for n in range(1, 5)]
    assert extrapolate_m_star(values) == pytest.approx(2.0, rel=1e-12)
    assert extrapolate_m_star([3.0]) == 3.0
