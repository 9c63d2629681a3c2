"""Finite-size key rates via a tangent lower bound on the entropy curve.

The certified entropy as a function of the CHSH winning probability is
convex, so its tangent at the operating point is an affine lower bound
(a min-tradeoff function).  Finite-size costs are generic second-order
and test-fraction penalties built from that tangent's slope and range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .bell import OptimizerOptions
from .keyrate import (
    NoisyPreprocessing,
    RateResult,
    binary_entropy,
    eve_entropy_term,
    optimize_rate,
    result_vector,
)
from .sources import ChannelModel, TwoPhotonParams

__all__ = [
    "MinTradeoff",
    "FiniteKeyParams",
    "FiniteCurvePoint",
    "tangent_min_tradeoff",
    "finite_key_rate",
    "finite_distance_sweep",
]

_ROOT8 = 2.0 * math.sqrt(2.0)
P_WIN_MIN = 0.75
P_WIN_MAX = (2.0 + math.sqrt(2.0)) / 4.0


def _eta_of_p(p: float, q: float) -> float:
    return eve_entropy_term(8.0 * p - 4.0, q)


def _deta_ds(s: float, q: float) -> float:
    """Analytic derivative of the certified entropy in the CHSH value."""
    u = math.sqrt(max(0.25 * s * s - 1.0, 1e-300))
    x = 0.5 * (1.0 + u)
    dx = s / (8.0 * u)
    term = -math.log2((1.0 - x) / x) * dx if x < 1.0 else 0.0
    if q > 0.0:
        w = math.sqrt(max(1.0 - q * (1.0 - q) * (8.0 - s * s), 1e-300))
        y = 0.5 * (1.0 + w)
        dy = q * (1.0 - q) * s / (2.0 * w)
        if y < 1.0:
            term += math.log2((1.0 - y) / y) * dy
    return term


@dataclass(frozen=True)
class MinTradeoff:
    """Affine lower bound f(p) = intercept + slope * p on the entropy curve."""

    slope: float
    intercept: float
    p0: float
    f0: float
    min_f: float
    max_f: float
    var_bound: float
    q: float

    def f(self, p: float) -> float:
        return self.intercept + self.slope * p


def tangent_min_tradeoff(s0: float, q: float = 0.0) -> MinTradeoff:
    """Tangent to the certified-entropy curve at CHSH value s0.

    The tangent is checked to minorize the curve across the full winning
    probability interval; violation raises, because a bad lower bound
    would silently overstate the key length.
    """
    if not 2.0 < s0 <= _ROOT8 + 1e-12:
        raise ValueError("tangent requires a CHSH value in (2, 2*sqrt(2)]")
    s0 = min(s0, _ROOT8 - 1e-9)
    p0 = (s0 + 4.0) / 8.0
    f0 = _eta_of_p(p0, q)
    slope = 8.0 * _deta_ds(s0, q)
    intercept = f0 - slope * p0
    mt = MinTradeoff(
        slope=slope,
        intercept=intercept,
        p0=p0,
        f0=f0,
        min_f=min(intercept + slope * P_WIN_MIN, intercept + slope * P_WIN_MAX),
        max_f=max(intercept + slope * P_WIN_MIN, intercept + slope * P_WIN_MAX),
        var_bound=slope * slope * P_WIN_MIN * (1.0 - P_WIN_MIN),
        q=q,
    )
    for i in range(1000):
        p = P_WIN_MIN + (P_WIN_MAX - P_WIN_MIN) * i / 999.0
        if mt.f(p) > _eta_of_p(p, q) + 1e-12:
            raise ValueError(
                f"tangent exceeds the entropy curve at p={p}: "
                f"{mt.f(p)} > {_eta_of_p(p, q)}"
            )
    return mt


@dataclass(frozen=True)
class FiniteKeyParams:
    """Block size and security parameters for the finite-size bound.

    n_rounds counts heralded rounds; gamma is the test fraction (None
    optimizes it); c1_scale and c2_scale rescale the sqrt(n) and 1/n
    penalty terms.
    """

    n_rounds: float
    eps_sound: float = 1e-6
    eps_ec: float = 1e-6
    gamma: float | None = None
    nu: float = 1e8
    c1_scale: float = 1.0
    c2_scale: float = 1.0

    def __post_init__(self):
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be at least 1")
        for eps in (self.eps_sound, self.eps_ec):
            if not 0.0 < eps < 1.0:
                raise ValueError("epsilons must lie in (0, 1)")
        if self.gamma is not None and not 0.0 < self.gamma <= 0.5:
            raise ValueError("gamma must lie in (0, 0.5]")


def _finite_fraction(mt: MinTradeoff, h_ec: float, params: FiniteKeyParams):
    """Key fraction l/n and the test fraction used, maximized over gamma."""
    n = float(params.n_rounds)
    c1 = params.c1_scale * math.sqrt(
        2.0 * mt.var_bound * math.log(2.0 / params.eps_sound)
    )
    span = mt.max_f - mt.min_f
    log_term = math.log2(2.0 / (params.eps_sound**2 * params.eps_ec))
    lead = mt.f0 - h_ec

    def frac(gamma):
        c2 = params.c2_scale * (span / gamma + log_term)
        return (1.0 - gamma) * lead - c1 / math.sqrt(n) - c2 / n

    if params.gamma is not None:
        g_star = params.gamma
    else:
        # frac(gamma) is unimodal: linear loss vs span/(gamma n) estimation cost
        inv = (math.sqrt(5.0) - 1.0) / 2.0
        a, b = -8.0, math.log10(0.5)
        c = b - inv * (b - a)
        d = a + inv * (b - a)
        fc, fd = frac(10.0**c), frac(10.0**d)
        for _ in range(70):
            if b - a < 1e-10:
                break
            if fc > fd:
                b, d, fd = d, c, fc
                c = b - inv * (b - a)
                fc = frac(10.0**c)
            else:
                a, c, fc = c, d, fd
                d = a + inv * (b - a)
                fd = frac(10.0**d)
        g_star = 10.0**c if fc > fd else 10.0**d
    return max(frac(g_star), 0.0), g_star


def finite_key_rate(
    protocol: str,
    eta_d: float,
    vis=1.0,
    channel: ChannelModel | None = None,
    params: FiniteKeyParams | None = None,
    operating_point: RateResult | None = None,
    opts: OptimizerOptions | None = None,
) -> tuple[float, float]:
    """Finite-size key fraction per heralded round and throughput in bits/s.

    The operating point (settings, source, q) is the asymptotic optimum
    unless one is passed in; only the extractable length is recomputed at
    finite block size.
    """
    if params is None:
        raise ValueError("params is required")
    channel = channel or ChannelModel()
    if operating_point is None:
        operating_point = optimize_rate(
            protocol, eta_d, vis, channel, opts, objective="throughput"
        )
    op = operating_point
    if op.r_raw <= 0.0 or op.S <= 2.0:
        return 0.0, 0.0
    mt = tangent_min_tradeoff(op.S, op.q_opt)
    l_per_n, _gamma = _finite_fraction(mt, op.h_ec, params)
    return l_per_n, params.nu * op.P_h * l_per_n


@dataclass
class FiniteCurvePoint:
    """One (distance, round budget) sample of the finite-size rate curve.

    n_pulses is the implied source-pulse count n_rounds / P_h.
    """

    L: float
    n_pulses: float
    n_rounds: float
    l_per_n: float
    R: float
    r_inf: float
    R_inf: float
    S: float
    q: float
    P_h: float


def finite_distance_sweep(
    protocol: str,
    eta_d: float,
    vis,
    round_counts,
    lengths,
    nu: float = 1e8,
    opts: OptimizerOptions | None = None,
    eps_sound: float = 1e-6,
    eps_ec: float = 1e-6,
    base_params: TwoPhotonParams | None = None,
) -> list[FiniteCurvePoint]:
    """Finite-size rate curves over distance for a family of round budgets.

    Each budget N counts heralded rounds accumulated at length L, taking
    n_pulses = N / P_h(L) source pulses of wall time N / (P_h * nu).  The
    asymptotic per-length optimum is reused as the operating point for all
    budgets; the throughput R stays proportional to P_h.
    """
    out = []
    seeds = ()
    q0 = 0.0
    for length in lengths:
        channel = ChannelModel(L=float(length))
        op = optimize_rate(
            protocol,
            eta_d,
            vis,
            channel,
            opts,
            nu=nu,
            objective="throughput",
            base_params=base_params,
            extra_seeds=seeds,
            q_init=q0,
        )
        if op.r_raw > 0.0:
            seeds = (result_vector(op),)
            q0 = op.q_opt
        for n_rounds in round_counts:
            n = float(n_rounds)
            if n < 10.0 or op.r_raw <= 0.0:
                l_per_n, rate = 0.0, 0.0
            else:
                fkp = FiniteKeyParams(
                    n_rounds=n, eps_sound=eps_sound, eps_ec=eps_ec, nu=nu
                )
                l_per_n, rate = finite_key_rate(
                    protocol, eta_d, vis, channel, fkp, operating_point=op
                )
            out.append(
                FiniteCurvePoint(
                    L=float(length),
                    n_pulses=n / op.P_h if op.P_h > 0.0 else 0.0,
                    n_rounds=n,
                    l_per_n=l_per_n,
                    R=rate,
                    r_inf=op.r,
                    R_inf=op.R,
                    S=op.S,
                    q=op.q_opt,
                    P_h=op.P_h,
                )
            )
    return out
