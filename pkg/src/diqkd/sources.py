"""Closed-form heralded states and heralding probabilities.

The two schemes share the geometry: sources at the parties, a heralding
station halfway, so every transmitted photon sees the square root of the
end-to-end transmissivity.  All closed forms here are validated against
the dense simulation in :mod:`diqkd.fock`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fock import TruncationPolicy, TwoModeState, herald_single_click_2ph

__all__ = [
    "ChannelModel",
    "OnePhotonParams",
    "TwoPhotonParams",
    "herald_prob_1ph",
    "herald_prob_2ph",
    "rho_1ph_closed",
    "rho_2ph_closed",
    "loss_parameter",
]

DEFAULT_PHASE = -math.pi / 2.0
# Bob-side source gain default; sets his local herald success probability
# P_s ~ eta_s sinh^2(g_b) and thereby the two-photon throughput scale
# (~10 bit/s at 100 km with a 100 MHz clock and 1e10-round blocks).
DEFAULT_G_B = 0.134


@dataclass(frozen=True)
class ChannelModel:
    """Fiber channel between the parties, station in the middle.

    L: end-to-end distance in km; alpha_att: attenuation in dB/km.
    eta_t is the end-to-end transmissivity; each photon only travels half
    the distance, hence the sqrt in r_t = 1 - sqrt(eta_t).
    """

    L: float = 0.0
    alpha_att: float = 0.2

    def __post_init__(self):
        if self.L < 0 or self.alpha_att < 0:
            raise ValueError("distance and attenuation must be nonnegative")

    @property
    def eta_t(self) -> float:
        return 10.0 ** (-self.alpha_att * self.L / 10.0)

    @property
    def sqrt_eta_t(self) -> float:
        return 10.0 ** (-self.alpha_att * self.L / 20.0)

    @property
    def r_t(self) -> float:
        return 1.0 - self.sqrt_eta_t

    @classmethod
    def from_r_t(cls, r_t: float, alpha_att: float = 0.2) -> "ChannelModel":
        """Channel whose per-arm loss equals r_t."""
        if not 0.0 <= r_t < 1.0:
            raise ValueError("r_t must lie in [0, 1)")
        length = -20.0 * math.log10(1.0 - r_t) / alpha_att
        return cls(L=length, alpha_att=alpha_att)


@dataclass(frozen=True)
class OnePhotonParams:
    """Source and station parameters of the one-photon scheme."""

    g: float
    channel: ChannelModel = field(default_factory=ChannelModel)
    eta_c: float = 1.0

    def __post_init__(self):
        if self.g < 0:
            raise ValueError("gain must be nonnegative")
        if not 0.0 < self.eta_c <= 1.0:
            raise ValueError("eta_c must be in (0, 1]")


@dataclass(frozen=True)
class TwoPhotonParams:
    """Source, splitter, and station parameters of the two-photon scheme.

    phase is the only observable phase combination: the offset between
    Bob's splitter and the station projector, entering the interference
    terms as e^(i phase); the default -pi/2 makes the joint probability
    carry Im(alpha beta).  sppe selects the single-photon limit of Bob's
    heralded source, which is what the closed forms assume; the general
    gain is reachable only through the dense simulation.
    """

    g_a: float
    t_s: float
    g_b: float = DEFAULT_G_B
    eta_s: float = 1.0
    t_c: float = 0.5
    r_c: float = 0.5
    phase: float = DEFAULT_PHASE
    channel: ChannelModel = field(default_factory=ChannelModel)
    eta_c: float = 1.0
    sppe: bool = True

    def __post_init__(self):
        if self.g_a < 0 or self.g_b < 0:
            raise ValueError("gains must be nonnegative")
        if not 0.0 < self.t_s < 1.0:
            raise ValueError("t_s must be in (0, 1)")
        if abs(self.t_c + self.r_c - 1.0) > 1e-12:
            raise ValueError("t_c + r_c must equal 1")
        if not 0.0 < self.eta_s <= 1.0:
            raise ValueError("eta_s must be in (0, 1]")
        if not 0.0 < self.eta_c <= 1.0:
            raise ValueError("eta_c must be in (0, 1]")

    @property
    def r_s(self) -> float:
        return 1.0 - self.t_s

    def herald_success(self) -> float:
        """Bob's local heralding probability P_s."""
        s = self.eta_s * math.sinh(self.g_b) ** 2
        return s / (1.0 + s)


def loss_parameter(g: float, r_t: float) -> float:
    """The combination C = r_t tanh(g)^2 controlling multiphoton damage."""
    return r_t * math.tanh(g) ** 2


def herald_prob_1ph(p: OnePhotonParams, per_pattern: bool = False) -> float:
    """Heralding probability per pulse of the one-photon scheme.

    The station has two detectors and either single-click pattern heralds
    an equivalent state; the default sums both patterns (2x the value for
    one pattern, which per_pattern=True returns).
    """
    x = p.channel.sqrt_eta_t * math.sinh(p.g) ** 2
    one = x / (1.0 + x) ** 3 * p.eta_c
    return one if per_pattern else 2.0 * one


def herald_prob_2ph(p: TwoPhotonParams, per_pattern: bool = False) -> float:
    """Heralding probability per pulse of the two-photon scheme.

    Includes Bob's local heralding success P_s and the station efficiency
    eta_c.  As in the one-photon case the default counts both single-click
    patterns; per_pattern=True returns the pattern matching the projector
    weights (t_c, r_c).  Requires the single-photon limit of Bob's source;
    a general-gain request is routed through the dense simulation.
    """
    if not p.sppe:
        warnings.warn(
            "general Bob gain has no closed form; using the dense simulation",
            RuntimeWarning,
            stacklevel=2,
        )
        _, prob = herald_single_click_2ph(p, TruncationPolicy())
        return prob if per_pattern else 2.0 * prob
    sq = p.channel.sqrt_eta_t
    s = math.sinh(p.g_a) ** 2
    y = sq * s
    # per-pattern norm for projector weights (t_c, r_c); the two patterns
    # swap t_c and r_c, so their sum is t_c-independent
    def norm(tc, rc):
        return sq * (tc * p.t_s / (1.0 + y) + rc * (1.0 - p.t_s * sq) * s / (1.0 + y) ** 2)

    ps = p.herald_success()
    if per_pattern:
        return norm(p.t_c, p.r_c) * ps * p.eta_c
    return (norm(p.t_c, p.r_c) + norm(p.r_c, p.t_c)) * ps * p.eta_c


def rho_1ph_closed(
    p: OnePhotonParams,
    policy: TruncationPolicy | None = None,
    vis: float = 1.0,
) -> TwoModeState:
    """Closed-form heralded state of the one-photon scheme.

    Double power series in C = r_t tanh(g)^2: each party keeps the photons
    whose transmitted twins were lost, on top of the heralded excitation.
    Truncated by the policy and renormalized; vis scales the interference
    (off-diagonal) part.
    """
    policy = policy or TruncationPolicy()
    c = loss_parameter(p.g, p.channel.r_t)
    d = policy.source_cutoff(p.g) + 1
    ns = np.arange(d)
    geo = c**ns                       # C^n
    lad = ns.astype(float) * c ** np.maximum(ns - 1, 0)  # n C^(n-1), 0 at n=0
    lad[0] = 0.0
    rho = np.kron(np.diag(geo), np.diag(lad)) + np.kron(np.diag(lad), np.diag(geo))
    rho = rho.astype(complex)
    # interference between "excitation kept at Alice" and "at Bob"
    root = np.sqrt(ns[:-1] + 1.0)
    for m in range(d - 1):
        for n in range(d - 1):
            amp = -1j * vis * c ** (m + n) * root[m] * root[n]
            row = m * d + (n + 1)     # |m, n+1>
            col = (m + 1) * d + n     # <m+1, n|
            rho[row, col] += amp
            rho[col, row] += np.conj(amp)
    return TwoModeState(rho / np.trace(rho), d, d)


def rho_2ph_closed(
    p: TwoPhotonParams,
    policy: TruncationPolicy | None = None,
    vis: float = 1.0,
) -> TwoModeState:
    """Closed-form heralded state of the two-photon scheme (Bob single-photon limit).

    Alice's kept mode carries a power series in r_t tanh(g_a)^2; Bob's kept
    mode is empty or single occupied depending on whether his photon was
    transmitted.  vis scales the interference part.
    """
    if not p.sppe:
        raise ValueError(
            "closed form requires the single-photon limit of Bob's source; "
            "use the dense simulation for general gain"
        )
    policy = policy or TruncationPolicy()
    r_t = p.channel.r_t
    tg = math.tanh(p.g_a)
    d = policy.source_cutoff(p.g_a) + 1
    ns = np.arange(d)
    lam = (tg**2) ** ns / math.cosh(p.g_a) ** 2
    w_sent = lam * r_t**ns * p.t_s * (p.t_c + ns * p.r_c)       # |n, 0>
    w_kept = np.zeros(d)                                         # |n, 1>
    w_kept[1:] = p.r_s * p.r_c * ns[1:] * lam[1:] * r_t ** (ns[1:] - 1)
    rho = np.zeros((2 * d, 2 * d), dtype=complex)
    idx0 = ns * 2           # |n, 0>
    idx1 = ns * 2 + 1       # |n, 1>
    rho[idx0, idx0] = w_sent
    rho[idx1, idx1] = w_kept
    cross_mag = (
        math.sqrt(p.t_s * p.r_s * p.t_c * p.r_c)
        * tg
        * np.sqrt(ns[:-1] + 1.0)
        * lam[:-1]
        * r_t ** ns[:-1]
    )
    phase = complex(math.cos(p.phase), math.sin(p.phase))
    for n in range(d - 1):
        amp = vis * phase * cross_mag[n]
        rho[idx0[n], idx1[n + 1]] += amp          # |n,0><n+1,1|
        rho[idx1[n + 1], idx0[n]] += np.conj(amp)
    return TwoModeState(rho / np.trace(rho), d, 2)
