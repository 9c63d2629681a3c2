"""Cross-validation of every closed-form expression against Fock numerics.

Each check draws random parameters, evaluates a closed form and its
independent truncated-Fock-space counterpart, and records the worst
deviation.  The `perturb` path multiplies one closed form at a time by
(1 + eps) and confirms the suite flags exactly that formula, which guards
the guards: a check that cannot detect a planted error proves nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fock, measurement, sources
from .fock import TruncationPolicy, trace_distance
from .sources import ChannelModel, OnePhotonParams, TwoPhotonParams

__all__ = ["CheckResult", "run_validation", "perturb_report", "CHECK_NAMES"]

PROB_TOL = 1e-9
STATE_TOL = 1e-8
SERIES_TOL = 1e-10
RATIO_TOL = 1e-8

# deeper cutoff than the default: the comparisons resolve 1e-9, so the
# reference itself must be converged well past that
_POLICY = TruncationPolicy(tail_bound=1e-20)


@dataclass
class CheckResult:
    """Outcome of one closed-form-versus-oracle check."""

    name: str
    max_err: float
    tol: float
    n_draws: int
    worst: str
    passed: bool


class _Tracker:
    def __init__(self):
        self.max_err = 0.0
        self.worst = ""

    def see(self, err: float, desc: str):
        if err > self.max_err:
            self.max_err = err
            self.worst = desc


def _draw_1ph(rng):
    g = rng.uniform(0.03, 0.3)
    r_t = rng.uniform(0.0, 0.9)
    eta = rng.uniform(0.5, 1.0)
    v = rng.uniform(0.8, 1.0)
    d1 = rng.uniform(0.0, 2.0) * np.exp(1j * rng.uniform(0.0, 2.0 * math.pi))
    d2 = rng.uniform(0.0, 2.0) * np.exp(1j * rng.uniform(0.0, 2.0 * math.pi))
    return g, r_t, eta, v, complex(d1), complex(d2)


def _draw_2ph(rng):
    g, r_t, eta, v, d1, d2 = _draw_1ph(rng)
    t_s = rng.uniform(0.1, 0.9)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    p = TwoPhotonParams(
        g_a=g, t_s=t_s, phase=phase, channel=ChannelModel.from_r_t(r_t)
    )
    return p, eta, v, d1, d2


def _check_displacement(rng, draws, scale):
    t = _Tracker()
    for _ in range(draws):
        mag = rng.uniform(0.0, 2.0)
        delta = complex(mag * np.exp(1j * rng.uniform(0.0, 2.0 * math.pi)))
        dim = int(rng.integers(4, 16))
        closed = fock.displacement_matrix(delta, dim).entries * scale
        # exponentiate in a larger basis: the truncated generator distorts
        # the matrix exponential near the cutoff
        big = _POLICY.measurement_dim(dim, delta)
        ref = fock.displacement_via_expm(delta, big).entries[:dim, :dim]
        err = float(np.max(np.abs(closed - ref)))
        t.see(err, f"delta={delta:.4f} dim={dim}")
    return CheckResult(
        "displacement_matrix", t.max_err, PROB_TOL, draws, t.worst,
        t.max_err <= PROB_TOL,
    )


def _check_povm_element(rng, draws, scale):
    t = _Tracker()
    for _ in range(draws):
        eta = rng.uniform(0.5, 1.0)
        mag = rng.uniform(0.0, 2.0)
        delta = complex(mag * np.exp(1j * rng.uniform(0.0, 2.0 * math.pi)))
        dim = 9
        ref = fock.displaced_noclick_numeric(delta, eta, dim, _POLICY).entries
        for n in range(dim):
            for m in range(dim):
                closed = measurement.povm_matrix_element(n, m, delta, eta) * scale
                err = abs(closed - ref[n, m])
                t.see(err, f"n={n} m={m} delta={delta:.4f} eta={eta:.4f}")
    return CheckResult(
        "noclick_povm_element", t.max_err, PROB_TOL, draws, t.worst,
        t.max_err <= PROB_TOL,
    )


def _oracle_1ph(g, r_t, v):
    p = OnePhotonParams(g=g, channel=ChannelModel.from_r_t(r_t))
    state, prob = fock.herald_single_click_1ph(g, r_t, policy=_POLICY, vis=v)
    return p, state, prob


def _check_marginal_1ph(rng, draws, scale):
    t = _Tracker()
    for _ in range(draws):
        g, r_t, eta, v, d1, d2 = _draw_1ph(rng)
        p, state, _ = _oracle_1ph(g, r_t, v)
        c = sources.loss_parameter(g, r_t)
        for side, d in (("a", d1), ("b", d2)):
            closed = measurement.p1ph_marginal(d, eta, c) * scale
            ref = fock.numeric_marginal(state, side, d, eta, _POLICY)
            t.see(abs(closed - ref), f"side={side} g={g:.3f} r_t={r_t:.3f} "
                  f"eta={eta:.3f} v={v:.3f} delta={d:.4f}")
    return CheckResult(
        "marginal_1ph", t.max_err, PROB_TOL, draws, t.worst, t.max_err <= PROB_TOL
    )


def _check_joint_1ph(rng, draws, scale):
    t = _Tracker()
    for _ in range(draws):
        g, r_t, eta, v, d1, d2 = _draw_1ph(rng)
        _, state, _ = _oracle_1ph(g, r_t, v)
        c = sources.loss_parameter(g, r_t)
        closed = measurement.p1ph_joint(d1, d2, eta, c, v) * scale
        ref = fock.numeric_probability(state, d1, d2, eta, _POLICY)
        t.see(abs(closed - ref), f"g={g:.3f} r_t={r_t:.3f} eta={eta:.3f} "
              f"v={v:.3f} alpha={d1:.4f} beta={d2:.4f}")
    return CheckResult(
        "joint_1ph", t.max_err, PROB_TOL, draws, t.worst, t.max_err <= PROB_TOL
    )


def _check_state_1ph(rng, draws, scale):
    t = _Tracker()
    for _ in range(draws):
        g, r_t, _, v, _, _ = _draw_1ph(rng)
        p, state, _ = _oracle_1ph(g, r_t, v)
        closed = sources.rho_1ph_closed(p, _POLICY, vis=v * scale)
        err = trace_distance(closed, state)
        t.see(err, f"g={g:.3f} r_t={r_t:.3f} v={v:.3f}")
    return CheckResult(
        "state_1ph", t.max_err, STATE_TOL, draws, t.worst, t.max_err <= STATE_TOL
    )


def _check_herald_1ph(rng, draws, scale):
    t = _Tracker()
    for _ in range(draws):
        g, r_t, _, v, _, _ = _draw_1ph(rng)
        p = OnePhotonParams(g=g, channel=ChannelModel.from_r_t(r_t))
        closed = sources.herald_prob_1ph(p) * scale
        _, prob = fock.herald_single_click_1ph(g, r_t, policy=_POLICY, vis=v)
        t.see(abs(closed - 2.0 * prob), f"g={g:.3f} r_t={r_t:.3f} v={v:.3f}")
    return CheckResult(
        "herald_prob_1ph", t.max_err, PROB_TOL, draws, t.worst, t.max_err <= PROB_TOL
    )


def _check_marginal_2ph_alice(rng, draws, scale):
    t = _Tracker()
    for _ in range(draws):
        p, eta, v, d1, _ = _draw_2ph(rng)
        state, _ = fock.herald_single_click_2ph(p, _POLICY, vis=v)
        closed = measurement.p2ph_marginal_alice(d1, eta, p) * scale
        ref = fock.numeric_marginal(state, "a", d1, eta, _POLICY)
        t.see(abs(closed - ref), f"g_a={p.g_a:.3f} t_s={p.t_s:.3f} "
              f"r_t={p.channel.r_t:.3f} eta={eta:.3f} alpha={d1:.4f}")
    return CheckResult(
        "marginal_2ph_alice", t.max_err, PROB_TOL, draws, t.worst,
        t.max_err <= PROB_TOL,
    )


def _check_marginal_2ph_bob(rng, draws, scale):
    t = _Tracker()
    for _ in range(draws):
        p, eta, v, _, d2 = _draw_2ph(rng)
        state, _ = fock.herald_single_click_2ph(p, _POLICY, vis=v)
        closed = measurement.p2ph_marginal_bob(d2, eta, p) * scale
        ref = fock.numeric_marginal(state, "b", d2, eta, _POLICY)
        t.see(abs(closed - ref), f"g_a={p.g_a:.3f} t_s={p.t_s:.3f} "
              f"r_t={p.channel.r_t:.3f} eta={eta:.3f} beta={d2:.4f}")
    return CheckResult(
        "marginal_2ph_bob", t.max_err, PROB_TOL, draws, t.worst,
        t.max_err <= PROB_TOL,
    )


def _check_joint_2ph(rng, draws, scale):
    t = _Tracker()
    for _ in range(draws):
        p, eta, v, d1, d2 = _draw_2ph(rng)
        state, _ = fock.herald_single_click_2ph(p, _POLICY, vis=v)
        closed = measurement.p2ph_joint(d1, d2, eta, p, v) * scale
        ref = fock.numeric_probability(state, d1, d2, eta, _POLICY)
        t.see(abs(closed - ref), f"g_a={p.g_a:.3f} t_s={p.t_s:.3f} "
              f"phase={p.phase:.3f} r_t={p.channel.r_t:.3f} eta={eta:.3f} "
              f"v={v:.3f} alpha={d1:.4f} beta={d2:.4f}")
    return CheckResult(
        "joint_2ph", t.max_err, PROB_TOL, draws, t.worst, t.max_err <= PROB_TOL
    )


def _check_state_2ph(rng, draws, scale):
    t = _Tracker()
    for _ in range(draws):
        p, _, v, _, _ = _draw_2ph(rng)
        state, _ = fock.herald_single_click_2ph(p, _POLICY, vis=v)
        closed = sources.rho_2ph_closed(p, _POLICY, vis=v * scale)
        err = trace_distance(closed, state)
        t.see(err, f"g_a={p.g_a:.3f} t_s={p.t_s:.3f} r_t={p.channel.r_t:.3f} "
              f"phase={p.phase:.3f} v={v:.3f}")
    return CheckResult(
        "state_2ph", t.max_err, STATE_TOL, draws, t.worst, t.max_err <= STATE_TOL
    )


def _check_herald_2ph(rng, draws, scale):
    t = _Tracker()
    for _ in range(draws):
        p, _, v, _, _ = _draw_2ph(rng)
        closed = sources.herald_prob_2ph(p) * scale
        _, prob = fock.herald_single_click_2ph(p, _POLICY, vis=v)
        t.see(abs(closed - 2.0 * prob), f"g_a={p.g_a:.3f} t_s={p.t_s:.3f} "
              f"r_t={p.channel.r_t:.3f}")
    return CheckResult(
        "herald_prob_2ph", t.max_err, PROB_TOL, draws, t.worst,
        t.max_err <= PROB_TOL,
    )


def _series_partial(terms):
    return math.fsum(terms)


def _check_series(rng, draws, scale):
    """Summed-series identities used in deriving the closed forms.

    Partial sums over 200 terms versus the closed right-hand sides, on a
    fixed grid of x and small indices; `draws` is ignored beyond the grid.
    """
    del rng, draws
    t = _Tracker()
    n_top = 200
    xs = (0.1, 0.3, 0.5, 0.7)
    for x in xs:
        for k in range(7):
            for kp in range(7):
                lhs = _series_partial(
                    math.exp(
                        math.lgamma(n + 1) - math.lgamma(n - k + 1)
                        - math.lgamma(n - kp + 1)
                    ) * x**n
                    for n in range(max(k, kp), n_top)
                )
                rhs = math.exp(x) * _series_partial(
                    math.exp(
                        math.lgamma(k + 1) + math.lgamma(kp + 1)
                        - math.lgamma(i + 1) - math.lgamma(k - i + 1)
                        - math.lgamma(kp - i + 1)
                    ) * x ** (k + kp - i)
                    for i in range(min(k, kp) + 1)
                ) * scale
                t.see(abs(lhs - rhs) / max(abs(rhs), 1.0),
                      f"identity=a x={x} k={k} k'={kp}")
            # n-weighted square version, single index k
            lhs = _series_partial(
                n * math.exp(
                    math.lgamma(n + 1) - 2.0 * math.lgamma(n - k + 1)
                ) * x**n
                for n in range(k, n_top)
            )
            rhs = math.exp(x) * x**k * _series_partial(
                math.exp(math.lgamma(k + 1) - math.lgamma(i + 1)) * (
                    math.comb(k + 1, i + 1) * x ** (i + 1)
                    + k * math.comb(k, i) * x**i
                )
                for i in range(k + 1)
            ) * scale
            t.see(abs(lhs - rhs) / max(abs(rhs), 1.0), f"identity=b x={x} k={k}")
            # geometric-binomial and its derivative form
            lhs = _series_partial(math.comb(n, k) * x**n for n in range(k, n_top))
            rhs = x**k / (1.0 - x) ** (k + 1) * scale
            t.see(abs(lhs - rhs) / max(abs(rhs), 1.0), f"identity=c x={x} k={k}")
            lhs = _series_partial(
                n * math.comb(n, k) * x ** (n - 1) for n in range(k, n_top)
            )
            rhs = (x**k + k * x ** (k - 1) if k else 1.0) / (1.0 - x) ** (
                k + 2
            ) * scale
            t.see(abs(lhs - rhs) / max(abs(rhs), 1.0), f"identity=d x={x} k={k}")
    return CheckResult(
        "series_identities", t.max_err, SERIES_TOL, 4 * 7 * 7, t.worst,
        t.max_err <= SERIES_TOL,
    )


def _check_ratio_1ph(rng, draws, scale):
    t = _Tracker()
    for _ in range(draws):
        g = rng.uniform(0.03, 0.3)
        r_t = rng.uniform(0.0, 0.9)
        closed = fock.multiphoton_ratio_1ph(g, r_t) * scale
        dist = fock.arrival_distribution_1ph(g, r_t, _POLICY)
        ref = float(np.sum(dist[2:]) / dist[1])
        t.see(abs(closed - ref) / abs(ref), f"g={g:.3f} r_t={r_t:.3f}")
    return CheckResult(
        "multiphoton_ratio_1ph", t.max_err, RATIO_TOL, draws, t.worst,
        t.max_err <= RATIO_TOL,
    )


def _check_ratio_2ph(rng, draws, scale):
    t = _Tracker()
    for _ in range(draws):
        g = rng.uniform(0.03, 0.3)
        r_t = rng.uniform(0.0, 0.9)
        t_s = rng.uniform(0.1, 0.9)
        closed = fock.multiphoton_ratio_2ph(g, r_t) * scale
        dist = fock.arrival_distribution_2ph(g, r_t, t_s, _POLICY)
        ref = float(np.sum(dist[2:]) / dist[1])
        t.see(abs(closed - ref) / abs(ref), f"g_a={g:.3f} r_t={r_t:.3f}")
    return CheckResult(
        "multiphoton_ratio_2ph", t.max_err, RATIO_TOL, draws, t.worst,
        t.max_err <= RATIO_TOL,
    )


_CHECKS = {
    "displacement_matrix": _check_displacement,
    "noclick_povm_element": _check_povm_element,
    "marginal_1ph": _check_marginal_1ph,
    "joint_1ph": _check_joint_1ph,
    "state_1ph": _check_state_1ph,
    "herald_prob_1ph": _check_herald_1ph,
    "marginal_2ph_alice": _check_marginal_2ph_alice,
    "marginal_2ph_bob": _check_marginal_2ph_bob,
    "joint_2ph": _check_joint_2ph,
    "state_2ph": _check_state_2ph,
    "herald_prob_2ph": _check_herald_2ph,
    "series_identities": _check_series,
    "multiphoton_ratio_1ph": _check_ratio_1ph,
    "multiphoton_ratio_2ph": _check_ratio_2ph,
}

CHECK_NAMES = tuple(_CHECKS)


def run_validation(
    draws: int = 200, seed: int = 20250 , names=None
) -> list[CheckResult]:
    """Run the cross-validation suite; each check gets a fresh seeded stream."""
    results = []
    for i, name in enumerate(names or CHECK_NAMES):
        rng = np.random.default_rng(seed + i)
        results.append(_CHECKS[name](rng, draws, 1.0))
    return results


def perturb_report(
    eps: float, draws: int = 40, seed: int = 20250, names=None
) -> list[tuple[str, bool, float]]:
    """Plant a (1+eps) error in each closed form in turn; report detection."""
    out = []
    for i, name in enumerate(names or CHECK_NAMES):
        rng = np.random.default_rng(seed + i)
        res = _CHECKS[name](rng, draws, 1.0 + eps)
        out.append((name, not res.passed, res.max_err))
    return out
