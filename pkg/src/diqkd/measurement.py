"""Closed-form displaced on-off statistics and behavior tables.

Each party displaces its kept mode and records click / no click.  The
closed forms below give the no-click marginals and the joint no-click
probability for both schemes, including partial interference visibility;
the behavior table assembles them into the full conditional distribution
p(a, b | x, y) used by the Bell and key-rate layers.

Outcome convention: no click maps to outcome +1 and key bit 0, click to
outcome -1 and key bit 1.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .sources import OnePhotonParams, TwoPhotonParams, loss_parameter

__all__ = [
    "DisplacementSetting",
    "MeasurementSettings",
    "VisibilityModel",
    "BehaviorTable",
    "p1ph_marginal",
    "p1ph_joint",
    "p2ph_marginal_alice",
    "p2ph_marginal_bob",
    "p2ph_joint",
    "povm_matrix_element",
    "behavior_table",
]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class DisplacementSetting:
    """One measurement setting: displacement amplitude in polar form."""

    magnitude: float
    phase: float = 0.0

    def __post_init__(self):
        if self.magnitude < 0:
            raise ValueError("magnitude must be nonnegative")
        object.__setattr__(self, "phase", self.phase % TWO_PI)

    @property
    def delta(self) -> complex:
        return self.magnitude * complex(math.cos(self.phase), math.sin(self.phase))


@dataclass(frozen=True)
class MeasurementSettings:
    """Two settings for Alice, three for Bob (the third is the key setting).

    Alice's first phase is the gauge reference and must be 0; any physical
    configuration can be rotated into this form without changing the
    statistics.
    """

    alice: tuple[DisplacementSetting, DisplacementSetting]
    bob: tuple[DisplacementSetting, DisplacementSetting, DisplacementSetting]

    def __post_init__(self):
        if len(self.alice) != 2 or len(self.bob) != 3:
            raise ValueError("need 2 Alice settings and 3 Bob settings")
        if self.alice[0].phase != 0.0:
            raise ValueError("gauge convention: alice[0].phase must be 0")


@dataclass(frozen=True)
class VisibilityModel:
    """Real interference visibility amplitude; the squared value is the
    two-source Hong-Ou-Mandel visibility.  Phases of the overlap are gauge
    and absorbed into Bob's setting phases."""

    v: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.v <= 1.0:
            raise ValueError("visibility amplitude must be in [0, 1]")


def _vis_value(vis) -> float:
    if vis is None:
        return 1.0
    if isinstance(vis, VisibilityModel):
        return vis.v
    return float(vis)


def p1ph_marginal(delta: complex, eta_d: float, c: float) -> float:
    """No-click probability of one party, one-photon scheme.

    c is the loss parameter r_t tanh(g)^2.  Independent of the other
    party's setting and of the visibility.
    """
    d2 = abs(delta) ** 2
    den = 1.0 - c * (1.0 - eta_d)
    num = (
        2.0 * den * den
        - eta_d * den
        + (1.0 - c) * eta_d**2 * d2
    )
    return (
        0.5 * (1.0 - c) * num / den**3 * math.exp(-eta_d * (1.0 - c) * d2 / den)
    )


def p1ph_joint(alpha: complex, beta: complex, eta_d: float, c: float, vis=1.0) -> float:
    """Joint no-click probability, one-photon scheme."""
    v = _vis_value(vis)
    a2 = abs(alpha) ** 2
    b2 = abs(beta) ** 2
    den = 1.0 - c * (1.0 - eta_d)
    inter = a2 + b2 + 2.0 * v * (alpha * beta.conjugate()).imag
    num = 2.0 * (1.0 - eta_d) * den + eta_d**2 * inter
    return (
        0.5
        * (1.0 - c) ** 3
        * num
        / den**4
        * math.exp(-eta_d * (1.0 - c) * (a2 + b2) / den)
    )


def p2ph_marginal_alice(alpha: complex, eta_d: float, p: TwoPhotonParams) -> float:
    """Alice's no-click probability, two-photon scheme."""
    a2 = abs(alpha) ** 2
    ct = loss_parameter(p.g_a, p.channel.r_t)
    tg2 = math.tanh(p.g_a) ** 2
    cs = p.r_s * tg2
    den = 1.0 - ct * (1.0 - eta_d)
    norm = p.t_s + p.r_s * tg2
    bracket = p.t_s * (1.0 + ct * eta_d**2 * a2 / den) + cs * (
        1.0 - eta_d + eta_d**2 * a2 / den
    )
    return (
        math.exp(-(1.0 - ct) * eta_d * a2 / den)
        * ((1.0 - ct) / den) ** 2
        * bracket
        / norm
    )


def p2ph_marginal_bob(beta: complex, eta_d: float, p: TwoPhotonParams) -> float:
    """Bob's no-click probability, two-photon scheme (his mode never left the lab)."""
    b2 = abs(beta) ** 2
    tg2 = math.tanh(p.g_a) ** 2
    cs = p.r_s * tg2
    norm = p.t_s + p.r_s * tg2
    return math.exp(-eta_d * b2) * (p.t_s + cs * (1.0 - eta_d + eta_d**2 * b2)) / norm


def p2ph_joint(
    alpha: complex, beta: complex, eta_d: float, p: TwoPhotonParams, vis=1.0
) -> float:
    """Joint no-click probability, two-photon scheme.

    The interference term carries e^(i phase) alpha beta; at the default
    phase it reduces to Im(alpha beta) scaled by the visibility.
    """
    v = _vis_value(vis)
    a2 = abs(alpha) ** 2
    b2 = abs(beta) ** 2
    ct = loss_parameter(p.g_a, p.channel.r_t)
    tg = math.tanh(p.g_a)
    den = 1.0 - ct * (1.0 - eta_d)
    norm = p.t_s + p.r_s * tg**2
    term_ts = p.t_s * (1.0 + ct * eta_d**2 * a2 / den)
    term_rs = (
        p.r_s
        * tg**2
        * (1.0 - eta_d + eta_d**2 * a2 / den)
        * (1.0 - eta_d + eta_d**2 * b2)
    )
    inter = (
        2.0
        * eta_d**2
        * tg
        * math.sqrt(p.t_s * p.r_s)
        * v
        * (cmath.exp(1j * p.phase) * alpha * beta).real
    )
    return (
        math.exp(-(1.0 - ct) * eta_d * a2 / den - eta_d * b2)
        * (1.0 - ct) ** 2
        / (norm * den**2)
        * (term_ts + term_rs + inter)
    )


def povm_matrix_element(n: int, n_p: int, delta: complex, eta_d: float) -> complex:
    """<n| D E_0 D^dag |n'> of the displaced no-click operator, closed form.

    e^(-eta |d|^2) sqrt(n! n'!) sum_i (1-eta)^i (eta |d|)^(n+n'-2i) e^(i arg(d) (n-n'))
    / (i! (n-i)! (n'-i)!), i = 0..min(n, n').
    """
    if n < 0 or n_p < 0:
        raise ValueError("photon numbers must be nonnegative")
    u = eta_d * abs(delta)
    if u == 0.0:
        return complex((1.0 - eta_d) ** n) if n == n_p else 0.0
    lo = math.log(u)
    acc = 0.0
    half = 0.5 * (gammaln(n + 1) + gammaln(n_p + 1))
    for i in range(min(n, n_p) + 1):
        logmag = (
            half
            - gammaln(i + 1)
            - gammaln(n - i + 1)
            - gammaln(n_p - i + 1)
            + (n + n_p - 2 * i) * lo
        )
        acc += (1.0 - eta_d) ** i * math.exp(logmag)
    theta = cmath.phase(complex(delta)) if delta != 0 else 0.0
    return (
        math.exp(-eta_d * abs(delta) ** 2)
        * acc
        * cmath.exp(1j * theta * (n - n_p))
    )


class ConsistencyError(ValueError):
    """A behavior table entry violated a structural constraint."""


@dataclass(frozen=True)
class BehaviorTable:
    """Conditional distribution p(a, b | x, y) with a, b in {no click, click}.

    joint[x, y, a, b] with x in {0,1}, y in {0,1,2} and outcome index
    0 = no click (+1), 1 = click (-1).  Marginals are stored separately;
    they are independent of the other party's setting by construction.
    """

    joint: np.ndarray
    marg_a: np.ndarray
    marg_b: np.ndarray

    def block(self, x: int, y: int) -> np.ndarray:
        return self.joint[x, y]

    def q_ab(self, x: int, y: int) -> float:
        return float(self.joint[x, y, 0, 0])

    def q_a(self, x: int) -> float:
        return float(self.marg_a[x, 0])

    def q_b(self, y: int) -> float:
        return float(self.marg_b[y, 0])

    def correlator(self, x: int, y: int) -> float:
        j = self.joint[x, y]
        return float(j[0, 0] - j[0, 1] - j[1, 0] + j[1, 1])

    def validate(self, tol: float = 1e-12) -> None:
        if np.any(self.joint < -tol) or np.any(self.joint > 1 + tol):
            raise ConsistencyError("joint entries outside [0, 1]")
        sums = self.joint.sum(axis=(2, 3))
        if np.max(np.abs(sums - 1.0)) > tol:
            raise ConsistencyError("blocks do not sum to 1")
        for x in range(2):
            for y in range(3):
                if abs(self.joint[x, y, 0, :].sum() - self.marg_a[x, 0]) > tol:
                    raise ConsistencyError("Alice marginal inconsistent with joint")
                if abs(self.joint[x, y, :, 0].sum() - self.marg_b[y, 0]) > tol:
                    raise ConsistencyError("Bob marginal inconsistent with joint")


def _assemble_block(p00: float, pa: float, pb: float) -> np.ndarray:
    block = np.array(
        [[p00, pa - p00], [pb - p00, 1.0 - pa - pb + p00]], dtype=float
    )
    if block.min() < -1e-12:
        raise ConsistencyError(
            f"negative probability {block.min():.3e} in behavior table"
        )
    return np.clip(block, 0.0, 1.0)


def behavior_table(
    protocol: str,
    params,
    settings: MeasurementSettings,
    eta_d: float,
    vis=1.0,
) -> BehaviorTable:
    """Assemble p(a, b | x, y) from the closed-form statistics.

    protocol: "one_photon" with OnePhotonParams, or "two_photon" with
    TwoPhotonParams.  No-signalling holds exactly: each marginal is
    computed once per setting, independent of the other party.
    """
    v = _vis_value(vis)
    deltas_a = [s.delta for s in settings.alice]
    deltas_b = [s.delta for s in settings.bob]
    if protocol == "one_photon":
        if not isinstance(params, OnePhotonParams):
            raise TypeError("one_photon protocol needs OnePhotonParams")
        c = loss_parameter(params.g, params.channel.r_t)
        pa = [p1ph_marginal(d, eta_d, c) for d in deltas_a]
        pb = [p1ph_marginal(d, eta_d, c) for d in deltas_b]
        joint = lambda da, db: p1ph_joint(da, db, eta_d, c, v)
    elif protocol == "two_photon":
        if not isinstance(params, TwoPhotonParams):
            raise TypeError("two_photon protocol needs TwoPhotonParams")
        pa = [p2ph_marginal_alice(d, eta_d, params) for d in deltas_a]
        pb = [p2ph_marginal_bob(d, eta_d, params) for d in deltas_b]
        joint = lambda da, db: p2ph_joint(da, db, eta_d, params, v)
    else:
        raise ValueError(f"unknown protocol {protocol!r}")

    blocks = np.zeros((2, 3, 2, 2))
    for x in range(2):
        for y in range(3):
            blocks[x, y] = _assemble_block(joint(deltas_a[x], deltas_b[y]), pa[x], pb[y])
    marg_a = np.array([[q, 1.0 - q] for q in pa])
    marg_b = np.array([[q, 1.0 - q] for q in pb])
    return BehaviorTable(joint=blocks, marg_a=marg_a, marg_b=marg_b)
