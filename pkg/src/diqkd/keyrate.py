"""Asymptotic device-independent key rates from CHSH statistics.

The certified rate uses only the CHSH value of the measured behavior plus
the conditional entropy of the raw key pair, with optional noisy
preprocessing (Alice flips her key bit with probability q).  Optimization
alternates between the measurement/source parameters and q.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial

import numpy as np

from .bell import OptimizerOptions, _chsh_value, _make_params, _multistart, _unpack
from .measurement import BehaviorTable, _vis_value
from .sources import (
    ChannelModel,
    TwoPhotonParams,
    herald_prob_1ph,
    herald_prob_2ph,
)

__all__ = [
    "NoisyPreprocessing",
    "RateResult",
    "binary_entropy",
    "eve_entropy_term",
    "rate_chsh_np",
    "ec_entropy",
    "optimize_rate",
    "result_vector",
    "distance_sweep",
]

_ROOT8 = 2.0 * math.sqrt(2.0)


def binary_entropy(x: float) -> float:
    """h(x) in bits; 0 outside the open unit interval."""
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return -(x * math.log2(x) + (1.0 - x) * math.log2(1.0 - x))


@dataclass(frozen=True)
class NoisyPreprocessing:
    """Alice flips her raw key bit with probability q before reconciliation."""

    q: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.q <= 0.5:
            raise ValueError("q must lie in [0, 0.5]")


def eve_entropy_term(s: float, q: float) -> float:
    """Certified H(A|E) from the CHSH value with preprocessing level q.

    Only the violation magnitude matters (outcome relabeling flips the
    sign), so the absolute value is taken and clamped to [2, 2*sqrt(2)].
    """
    s = min(max(abs(s), 2.0), _ROOT8)
    u = math.sqrt(max(0.25 * s * s - 1.0, 0.0))
    w = math.sqrt(max(1.0 - q * (1.0 - q) * (8.0 - s * s), 0.0))
    return (
        1.0
        - binary_entropy(0.5 * (1.0 + u))
        + binary_entropy(0.5 * (1.0 + w))
    )


def rate_chsh_np(s: float, h_ec: float, q: float = 0.0) -> float:
    """Asymptotic rate: certified entropy minus reconciliation cost."""
    return eve_entropy_term(s, q) - h_ec


def _block_cond_entropy(q_ab: float, q_a: float, q_b: float, q: float) -> float:
    """H(A|B) of a 2x2 outcome block after flipping A with probability q."""
    p = [
        [q_ab, q_a - q_ab],
        [q_b - q_ab, 1.0 - q_a - q_b + q_ab],
    ]
    if q > 0.0:
        p = [
            [(1.0 - q) * p[0][0] + q * p[1][0], (1.0 - q) * p[0][1] + q * p[1][1]],
            [(1.0 - q) * p[1][0] + q * p[0][0], (1.0 - q) * p[1][1] + q * p[0][1]],
        ]
    h_ab = 0.0
    for row in p:
        for v in row:
            if v > 0.0:
                h_ab -= v * math.log2(v)
    h_b = 0.0
    for col in range(2):
        v = p[0][col] + p[1][col]
        if v > 0.0:
            h_b -= v * math.log2(v)
    return h_ab - h_b


def ec_entropy(table: BehaviorTable, preprocessing: NoisyPreprocessing) -> float:
    """Reconciliation entropy H(A|B) of the key block (Alice 1, Bob 3)."""
    return _block_cond_entropy(
        table.q_ab(0, 2), table.q_a(0), table.q_b(2), preprocessing.q
    )


@dataclass
class RateResult:
    """Optimized rate with the operating point that achieves it."""

    r: float
    S: float
    h_ec: float
    q_opt: float
    P_h: float
    R: float
    nu: float
    settings: object
    source_params: dict
    r_raw: float
    flagged: bool = False
    L: float | None = None


def _herald_prob(protocol: str, params) -> float:
    if protocol == "one_photon":
        return herald_prob_1ph(params)
    return herald_prob_2ph(params)


def result_vector(res: RateResult) -> np.ndarray:
    """Optimizer start vector reproducing a RateResult's operating point."""
    a1, a2 = res.settings.alice
    b1, b2, b3 = res.settings.bob
    x = list(res.source_params.values())
    x += [
        a1.magnitude, a2.magnitude, a2.phase,
        b1.magnitude, b1.phase, b2.magnitude, b2.phase,
        b3.magnitude, b3.phase,
    ]
    return np.array(x, dtype=float)


def _key_stats(protocol, params, settings, eta_d, v):
    """CHSH value plus the key-block no-click probabilities."""
    from .measurement import (
        p1ph_joint,
        p1ph_marginal,
        p2ph_joint,
        p2ph_marginal_alice,
        p2ph_marginal_bob,
    )
    from .sources import loss_parameter

    s, _ = _chsh_value(protocol, params, settings, eta_d, v)
    da = settings.alice[0].delta
    db = settings.bob[2].delta
    if protocol == "one_photon":
        c = loss_parameter(params.g, params.channel.r_t)
        q_a = p1ph_marginal(da, eta_d, c)
        q_b = p1ph_marginal(db, eta_d, c)
        q_ab = p1ph_joint(da, db, eta_d, c, v)
    else:
        q_a = p2ph_marginal_alice(da, eta_d, params)
        q_b = p2ph_marginal_bob(db, eta_d, params)
        q_ab = p2ph_joint(da, db, eta_d, params, v)
    return s, q_ab, q_a, q_b


def _golden_max(f, lo, hi, tol=1e-7, maxit=80):
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(maxit):
        if b - a < tol:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return (c, fc) if fc > fd else (d, fd)


def _best_q(rate_of_q, grid_n=51):
    """Maximize over the flip probability: coarse grid then golden refine."""
    qs = np.linspace(0.0, 0.5, grid_n)
    vals = [rate_of_q(q) for q in qs]
    k = int(np.argmax(vals))
    lo = qs[max(k - 1, 0)]
    hi = qs[min(k + 1, grid_n - 1)]
    q_star, v_star = _golden_max(rate_of_q, lo, hi)
    if vals[k] >= v_star:
        return float(qs[k]), float(vals[k])
    return float(q_star), float(v_star)


def optimize_rate(
    protocol: str,
    eta_d: float,
    vis=1.0,
    channel: ChannelModel | None = None,
    opts: OptimizerOptions | None = None,
    preprocessing: NoisyPreprocessing | None = None,
    nu: float = 1e8,
    objective: str = "round",
    base_params: TwoPhotonParams | None = None,
    extra_seeds: tuple = (),
    q_init: float = 0.0,
) -> RateResult:
    """Maximize the asymptotic rate over settings, source knobs and q.

    objective "round" maximizes the per-heralded-round rate r; "throughput"
    maximizes P_h * r, trading violation quality against heralding yield.
    With `preprocessing` given, q is held fixed; otherwise it is optimized
    by alternation with the continuous parameters, starting from `q_init`.
    `extra_seeds` are additional start vectors (same layout as the internal
    one), useful for warm-starting continuation sweeps.
    """
    if objective not in ("round", "throughput"):
        raise ValueError("objective must be 'round' or 'throughput'")
    channel = channel or ChannelModel()
    opts = opts or OptimizerOptions()
    v = _vis_value(vis)

    def value(x, q):
        src, settings = _unpack(protocol, x, with_key_setting=True)
        params = _make_params(protocol, src, channel, base=base_params)
        s, q_ab, q_a, q_b = _key_stats(protocol, params, settings, eta_d, v)
        h_ec = _block_cond_entropy(q_ab, q_a, q_b, q)
        r = rate_chsh_np(s, h_ec, q)
        if objective == "throughput":
            return r * _herald_prob(protocol, params)
        return r

    fixed_q = preprocessing.q if preprocessing is not None else None
    q_cur = fixed_q if fixed_q is not None else float(q_init)

    # seed with the CHSH optimum: the positive-rate basin sits inside the
    # violating region, which the plain quasi-random starts can miss
    from .bell import optimize_chsh

    chsh_seed = optimize_chsh(protocol, eta_d, vis, channel, opts)
    seed_x = list(chsh_seed.source_params.values())
    a1, a2 = chsh_seed.settings.alice
    b1, b2 = chsh_seed.settings.bob[:2]
    seed_x += [a1.magnitude, a2.magnitude, a2.phase, b1.magnitude, b1.phase,
               b2.magnitude, b2.phase, b1.magnitude, b1.phase]

    best, nfev = _multistart(
        lambda x: -value(x, q_cur),
        protocol,
        opts,
        with_key_setting=True,
        extra_starts=[seed_x] + [np.asarray(s, dtype=float) for s in extra_seeds],
    )
    x_cur = best.x
    if fixed_q is None:
        for _ in range(3):
            q_cur, _v = _best_q(lambda q: value(x_cur, q))
            res = _multistart(
                lambda x: -value(x, q_cur),
                protocol,
                replace(opts, starts=1),
                with_key_setting=True,
                extra_starts=[x_cur],
            )[0]
            x_cur = res.x

    src, settings = _unpack(protocol, x_cur, with_key_setting=True)
    params = _make_params(protocol, src, channel, base=base_params)
    s, q_ab, q_a, q_b = _key_stats(protocol, params, settings, eta_d, v)
    h_ec = _block_cond_entropy(q_ab, q_a, q_b, q_cur)
    r_raw = rate_chsh_np(s, h_ec, q_cur)
    p_h = _herald_prob(protocol, params)
    r = max(r_raw, 0.0)
    return RateResult(
        r=r,
        S=abs(s),
        h_ec=h_ec,
        q_opt=q_cur,
        P_h=p_h,
        R=p_h * nu * r,
        nu=nu,
        settings=settings,
        source_params=src,
        r_raw=r_raw,
        flagged=r_raw <= 0.0,
        L=channel.L,
    )


def _sweep_point(args, extra_seeds=(), q_init=0.0):
    (protocol, eta_d, vis_v, length, nu, opts, q_fixed, base_params) = args
    pre = NoisyPreprocessing(q_fixed) if q_fixed is not None else None
    res = optimize_rate(
        protocol,
        eta_d,
        vis_v,
        ChannelModel(L=length),
        opts,
        preprocessing=pre,
        nu=nu,
        objective="throughput",
        base_params=base_params,
        extra_seeds=extra_seeds,
        q_init=q_init,
    )
    return res


def distance_sweep(
    protocol: str,
    eta_d: float,
    vis,
    lengths,
    nu: float = 1e8,
    opts: OptimizerOptions | None = None,
    preprocessing: NoisyPreprocessing | None = None,
    jobs: int = 1,
    base_params: TwoPhotonParams | None = None,
) -> list[RateResult]:
    """Throughput-optimal rate at each fiber length.

    With jobs == 1 the points are processed in the order given and each
    optimization is warm-started from the previous point, which keeps the
    curve on the dominant branch.  With jobs > 1 the first point is solved
    alone and the rest run in parallel seeded from it.
    """
    opts = opts or OptimizerOptions()
    v = _vis_value(vis)
    q_fixed = preprocessing.q if preprocessing is not None else None
    work = [
        (protocol, eta_d, v, float(length), nu, opts, q_fixed, base_params)
        for length in lengths
    ]
    if not work:
        return []
    if jobs > 1:
        first = _sweep_point(work[0])
        seeds = (result_vector(first),) if first.r_raw > 0.0 else ()
        point = partial(_sweep_point, extra_seeds=seeds, q_init=first.q_opt)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return [first] + list(pool.map(point, work[1:]))
    results = []
    seeds = ()
    q0 = 0.0
    for w in work:
        res = _sweep_point(w, extra_seeds=seeds, q_init=q0)
        if res.r_raw > 0.0:
            seeds = (result_vector(res),)
            q0 = res.q_opt
        results.append(res)
    return results
