"""Finite-block key fractions and the affine entropy lower bound."""

import math
from dataclasses import replace

import numpy as np
import pytest

from diqkd import (
    FiniteKeyParams,
    OptimizerOptions,
    RateResult,
    eve_entropy_term,
    finite_distance_sweep,
    finite_key_rate,
    optimize_rate,
    tangent_min_tradeoff,
)

FAST = replace(OptimizerOptions(), starts=4)


@pytest.fixture(scope="module")
def operating_point():
    return optimize_rate("one_photon", 0.96, opts=FAST, objective="throughput")


@pytest.mark.parametrize("s0,q", [(2.3, 0.0), (2.6, 0.0), (2.5, 0.2)])
def test_tangent_touches_entropy_curve(s0, q):
    mt = tangent_min_tradeoff(s0, q)
    p0 = (s0 + 4.0) / 8.0
    assert np.isclose(mt.p0, p0, rtol=0, atol=1e-12)
    assert np.isclose(mt.f(p0), eve_entropy_term(s0, q), rtol=0, atol=1e-12)


@pytest.mark.parametrize("s0,q", [(2.3, 0.0), (2.7, 0.15)])
def test_tangent_slope_matches_numeric_derivative(s0, q):
    mt = tangent_min_tradeoff(s0, q)
    h = 1e-6
    num = (eve_entropy_term(s0 + h, q) - eve_entropy_term(s0 - h, q)) / (2.0 * h)
    assert np.isclose(mt.slope, 8.0 * num, rtol=1e-5, atol=1e-8)


def test_tangent_minorizes_curve_on_grid():
    mt = tangent_min_tradeoff(2.55, 0.1)
    for p in np.linspace(0.75, (2.0 + math.sqrt(2.0)) / 4.0, 200):
        s = 8.0 * p - 4.0
        assert mt.f(p) <= eve_entropy_term(s, mt.q) + 1e-10


def test_tangent_variance_bound():
    mt = tangent_min_tradeoff(2.4)
    assert np.isclose(mt.var_bound, mt.slope**2 * 0.1875, rtol=0, atol=1e-12)
    assert mt.min_f <= mt.f(mt.p0) <= mt.max_f


def test_tangent_rejects_classical_values():
    for s0 in (2.0, 1.5, -2.5):
        with pytest.raises(ValueError):
            tangent_min_tradeoff(s0)


def test_finite_key_params_validation():
    with pytest.raises(ValueError):
        FiniteKeyParams(n_rounds=0)
    with pytest.raises(ValueError):
        FiniteKeyParams(n_rounds=1e8, eps_sound=0.0)
    with pytest.raises(ValueError):
        FiniteKeyParams(n_rounds=1e8, gamma=0.9)


def test_finite_rate_below_asymptotic_and_monotone(operating_point):
    op = operating_point
    fracs = []
    for n in (1e8, 1e10, 1e12):
        l_per_n, rate = finite_key_rate(
            "one_photon", 0.96, params=FiniteKeyParams(n_rounds=n),
            operating_point=op,
        )
        assert 0.0 < l_per_n < op.r
        assert np.isclose(rate, 1e8 * op.P_h * l_per_n, rtol=0, atol=1e-9)
        fracs.append(l_per_n)
    assert fracs[0] < fracs[1] < fracs[2]


def test_finite_rate_zero_without_violation(operating_point):
    op = operating_point
    dead = RateResult(
        r=0.0, S=1.9, h_ec=1.0, q_opt=0.0, P_h=op.P_h, R=0.0, nu=op.nu,
        settings=op.settings, source_params=op.source_params, r_raw=-0.1,
        flagged=True,
    )
    l_per_n, rate = finite_key_rate(
        "one_photon", 0.96, params=FiniteKeyParams(n_rounds=1e10),
        operating_point=dead,
    )
    assert (l_per_n, rate) == (0.0, 0.0)


def test_finite_key_rate_requires_params():
    with pytest.raises(ValueError):
        finite_key_rate("one_photon", 0.96)


def test_finite_sweep_orders_budgets_within_length():
    pts = finite_distance_sweep(
        "one_photon", 0.96, 1.0, [1e8, 1e10], [0.0], opts=FAST
    )
    assert len(pts) == 2
    small, large = pts
    assert small.n_rounds == 1e8 and large.n_rounds == 1e10
    assert 0.0 < small.R < large.R
    assert small.r_inf == large.r_inf
    assert np.isclose(small.n_pulses, 1e8 / small.P_h, rtol=0, atol=1e-3)
    assert small.l_per_n < small.r_inf


def test_finite_sweep_rejects_tiny_blocks():
    pts = finite_distance_sweep("one_photon", 0.96, 1.0, [4.0], [0.0], opts=FAST)
    assert pts[0].R == 0.0 and pts[0].l_per_n == 0.0
