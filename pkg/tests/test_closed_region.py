from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drawdown.closed_region import phi_above_safe, phi_above_safe_derivatives, pi_ruin, ruin_slope
from drawdown.errors import DomainError
from drawdown.market import BASELINE, HIGH_DRIFT, derive_constants
from drawdown.verification import l_beta

# ((25 - 18.75) / 12.5) ** gamma evaluated with 40-digit gamma
PHI_BENCHMARK = 0.37331485804324781


def test_boundary_values(k1):
    assert phi_above_safe(12.5, 25.0, k1, BASELINE) == 1.0
    assert phi_above_safe(25.0, 25.0, k1, BASELINE) == 0.0
    assert pi_ruin(25.0, k1, BASELINE) == 0.0


def test_benchmark_value(k1):
    assert phi_above_safe(18.75, 25.0, k1, BASELINE) == pytest.approx(PHI_BENCHMARK, rel=1e-14)


def test_ruin_strategy_values(k1, k2):
    assert pi_ruin(12.5, k1, BASELINE) == pytest.approx(14.826758270431340, rel=1e-13)
    assert pi_ruin(12.5, k2, HIGH_DRIFT) == pytest.approx(2.0 * 12.5 / 2.7320508075688773, rel=1e-13)
    assert ruin_slope(k1, BASELINE) == pytest.approx(14.826758270431340 / 12.5)


def test_clamps_round_off_above_safe_level(k1):
    assert phi_above_safe(25.0 * (1 + 5e-13), 25.0, k1, BASELINE) == 0.0


@pytest.mark.parametrize("w,m", [(12.0, 25.0), (26.0, 30.0), (20.0, 24.0)])
def test_domain_errors(k1, w, m):
    with pytest.raises(DomainError):
        phi_above_safe(w, m, k1, BASELINE)


def test_ruin_strategy_rejects_wealth_above_safe(k1):
    with pytest.raises(DomainError):
        pi_ruin(26.0, k1, BASELINE)


@pytest.mark.parametrize("params", [BASELINE, HIGH_DRIFT])
@pytest.mark.parametrize("m", [25.0, 30.0, 45.0])
def test_shape_and_hjb(params, m):
    k = derive_constants(params)
    w = np.linspace(params.alpha * m, 25.0, 1000)
    phi = phi_above_safe(w, m, k, params)
    assert np.all(np.diff(phi) <= 0)
    assert np.all(np.diff(phi, 2) >= -1e-8)
    h, h_w, h_ww = phi_above_safe_derivatives(w[:-1], m, k, params)
    at_ruin = l_beta(h, h_w, h_ww, w[:-1], pi_ruin(w[:-1], k, params), params)
    assert np.max(np.abs(at_ruin)) <= 1e-8
    rng = np.random.default_rng(7)
    for beta in rng.uniform(0, 60, 100):
        assert np.min(l_beta(h, h_w, h_ww, w[:-1], beta, params)) >= -1e-8


def test_derivatives_match_differences(k1):
    w = np.linspace(13.0, 24.0, 50)
    step = 1e-5 * 25
    phi, phi_w, phi_ww = phi_above_safe_derivatives(w, 25.0, k1, BASELINE)
    up = phi_above_safe(w + step, 25.0, k1, BASELINE)
    dn = phi_above_safe(w - step, 25.0, k1, BASELINE)
    np.testing.assert_allclose(phi_w, (up - dn) / (2 * step), rtol=1e-6)
    np.testing.assert_allclose(phi_ww, (up - 2 * phi + dn) / step**2, rtol=1e-4)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(25.0, 60.0), st.floats(25.0, 60.0))
def test_zero_alpha_value_independent_of_m(s, m1, m2):
    p = replace(BASELINE, alpha=0.0)
    k = derive_constants(p)
    w = 25.0 * s
    assert phi_above_safe(w, m1, k, p) == phi_above_safe(w, m2, k, p)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(25.0, 49.0))
def test_monotone_in_wealth(s1, s2, m):
    k = derive_constants(BASELINE)
    lo = 0.5 * m
    a, b = sorted((lo + s1 * (25 - lo), lo + s2 * (25 - lo)))
    assert phi_above_safe(a, m, k, BASELINE) >= phi_above_safe(b, m, k, BASELINE)
    assert 0.0 <= phi_above_safe(a, m, k, BASELINE) <= 1.0
    assert pi_ruin(a, k, BASELINE) >= pi_ruin(b, k, BASELINE) >= 0.0
