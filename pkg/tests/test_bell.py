"""CHSH evaluation, optimization, and threshold search."""

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st

from conftest import random_1ph, random_2ph, random_settings
from diqkd import (
    ChshResult,
    OptimizerOptions,
    behavior_table,
    chsh,
    chsh_from_settings,
    chsh_qform,
    correlator,
    detection_threshold,
    optimize_chsh,
)

TSIRELSON = 2.0 * math.sqrt(2.0)
FAST = replace(OptimizerOptions(), starts=4)


@pytest.mark.parametrize("protocol,seed", [("one_photon", 0), ("one_photon", 1),
                                           ("two_photon", 2), ("two_photon", 3)])
def test_qform_equals_correlator_chsh(protocol, seed):
    rng = np.random.default_rng(seed)
    p = random_1ph(rng) if protocol == "one_photon" else random_2ph(rng)
    s = random_settings(rng)
    table = behavior_table(protocol, p, s, eta_d=0.9, vis=0.95)
    via_q = chsh_qform(
        table.q_ab(0, 0), table.q_ab(0, 1), table.q_ab(1, 0), table.q_ab(1, 1),
        table.q_a(0), table.q_b(0),
    )
    assert abs(chsh(table) - via_q) < 1e-12


def test_correlator_identity_from_no_click_probabilities():
    rng = np.random.default_rng(5)
    p = random_1ph(rng)
    s = random_settings(rng)
    table = behavior_table("one_photon", p, s, eta_d=0.85)
    for x in range(2):
        for y in range(2):
            e_direct = table.correlator(x, y)
            e_probs = correlator(table.q_ab(x, y), table.q_a(x), table.q_b(y))
            assert abs(e_direct - e_probs) < 1e-12


def test_chsh_from_settings_matches_table_route():
    rng = np.random.default_rng(6)
    p = random_2ph(rng)
    s = random_settings(rng)
    table = behavior_table("two_photon", p, s, eta_d=0.9)
    assert abs(abs(chsh(table)) - chsh_from_settings("two_photon", p, s, 0.9)) < 1e-12


@hyp_settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), eta=st.floats(0.5, 1.0), vis=st.floats(0.8, 1.0))
def test_correlators_stay_physical(seed, eta, vis):
    rng = np.random.default_rng(seed)
    p = random_1ph(rng)
    s = random_settings(rng)
    table = behavior_table("one_photon", p, s, eta_d=eta, vis=vis)
    table.validate(tol=1e-12)
    for x in range(2):
        for y in range(2):
            assert abs(table.correlator(x, y)) <= 1.0 + 1e-12


def test_optimize_chsh_ideal_one_photon():
    res = optimize_chsh("one_photon", 1.0, opts=FAST)
    res.validate()
    assert res.S == abs(res.S_signed)
    assert 2.66 < res.S < TSIRELSON
    assert res.settings.alice[0].phase == 0.0
    assert res.n_evals > 0


def test_optimize_chsh_ideal_two_photon():
    res = optimize_chsh("two_photon", 1.0, opts=FAST)
    res.validate()
    assert 2.66 < res.S < TSIRELSON
    assert set(res.source_params) == {"g_a", "t_s"}


def test_optimize_chsh_degrades_with_detector_efficiency():
    best = optimize_chsh("one_photon", 1.0, opts=FAST).S
    worse = optimize_chsh("one_photon", 0.9, opts=FAST).S
    assert worse < best
    assert worse > 2.0


def test_locked_phases_cannot_beat_free_optimization():
    locked = optimize_chsh(
        "one_photon", 0.95, opts=FAST, phases=(math.pi, 1.5 * math.pi, 0.5 * math.pi)
    )
    free = optimize_chsh("one_photon", 0.95, opts=FAST)
    assert locked.S <= free.S + 1e-6
    assert locked.S > 2.0
    assert np.isclose(locked.settings.alice[1].phase, math.pi, rtol=0, atol=1e-12)


def test_chsh_result_validation_rejects_superquantum():
    res = optimize_chsh("one_photon", 1.0, opts=FAST)
    bad = ChshResult(
        S=3.0,
        settings=res.settings,
        source_params=res.source_params,
        correlators=res.correlators,
        seed=1,
        n_evals=1,
        S_signed=3.0,
    )
    with pytest.raises(ValueError):
        bad.validate()


def test_detection_threshold_rejects_unknown_quantity():
    with pytest.raises(ValueError):
        detection_threshold("one_photon", quantity="steering")


def test_detection_threshold_requires_bracketing():
    # the one-photon scheme still violates at 0.9, so the lower bracket
    # never loses the violation and the search must refuse to answer
    with pytest.raises(ValueError):
        detection_threshold("one_photon", quantity="bell", lo=0.9, hi=1.0, opts=FAST)
