"""Truncated Fock-space reference numerics.

Dense-matrix simulation of two-mode squeezed sources, lossy transmission,
heralding at a central station, and displaced on-off measurements. The
routines here use nothing but basic linear algebra on truncated
photon-number bases; every closed form in the rest of the package is
validated against them, never the other way around.

Conventions
-----------
Mode order for two-mode objects is (Alice kept, Bob kept); the matrix row
index is n_a * dim_b + n_b.  The heralding station sits between the
parties; each transmitted photon is lost with probability r_t before
arriving.  Heralding projects on "exactly one photon arrived, at one
specific detector"; detector inefficiency at the station only rescales the
heralding probability and never enters the conditional state.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.linalg import expm
from scipy.special import gammaln

if TYPE_CHECKING:  # only for annotations; avoids an import cycle
    from .sources import TwoPhotonParams

__all__ = [
    "TruncationPolicy",
    "FockOperator",
    "TwoModeState",
    "tmsv_coefficients",
    "displacement_matrix",
    "displacement_via_expm",
    "noclick_povm",
    "displaced_noclick_numeric",
    "loss_channel",
    "loss_kraus",
    "herald_single_click_1ph",
    "herald_single_click_2ph",
    "numeric_probability",
    "numeric_marginal",
    "arrival_distribution_1ph",
    "arrival_distribution_2ph",
    "multiphoton_ratio_1ph",
    "multiphoton_ratio_2ph",
    "trace_distance",
]


@dataclass(frozen=True)
class TruncationPolicy:
    """Photon-number cutoff rule.

    n_max: explicit cutoff; None selects it from the squeezed-source tail.
    tail_bound: residual probability mass allowed above the cutoff.
    """

    n_max: int | None = None
    tail_bound: float = 1e-12

    def __post_init__(self):
        if self.n_max is not None and self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if not 0 < self.tail_bound < 1:
            raise ValueError("tail_bound must be in (0, 1)")

    def source_cutoff(self, g: float) -> int:
        """Smallest n_max with geometric tail tanh(g)^(2(n_max+1)) <= tail_bound."""
        if self.n_max is not None:
            return self.n_max
        if g <= 0:
            return 1
        t2 = math.tanh(g) ** 2
        # tail above n_max is t2^(n_max+1)
        n = math.ceil(math.log(self.tail_bound) / math.log(t2)) - 1
        return max(int(n), 1)

    def measurement_dim(self, state_dim: int, *deltas: complex) -> int:
        """Basis size with displacement headroom |d|^2 + 10|d| + 20."""
        dmax = max((abs(d) for d in deltas), default=0.0)
        return state_dim + math.ceil(dmax * dmax + 10.0 * dmax) + 20


@dataclass
class FockOperator:
    """Dense operator on a truncated photon-number basis."""

    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=complex)
        if self.entries.ndim != 2 or self.entries.shape[0] != self.entries.shape[1]:
            raise ValueError("entries must be a square matrix")

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def dagger(self) -> "FockOperator":
        return FockOperator(self.entries.conj().T)

    def is_hermitian(self, tol: float = 1e-10) -> bool:
        return bool(np.max(np.abs(self.entries - self.entries.conj().T)) <= tol)

    def is_povm_element(self, tol: float = 1e-10) -> bool:
        """Hermitian with spectrum inside [0, 1] up to tol."""
        if not self.is_hermitian(tol):
            return False
        w = np.linalg.eigvalsh(self.entries)
        return bool(w.min() >= -tol and w.max() <= 1.0 + tol)


@dataclass
class TwoModeState:
    """Dense two-mode density matrix over |n_a, n_b>."""

    rho: np.ndarray
    dim_a: int
    dim_b: int

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=complex)
        d = self.dim_a * self.dim_b
        if self.rho.shape != (d, d):
            raise ValueError("rho shape does not match dim_a * dim_b")

    def trace(self) -> float:
        return float(np.trace(self.rho).real)

    def normalized(self) -> "TwoModeState":
        return TwoModeState(self.rho / np.trace(self.rho), self.dim_a, self.dim_b)

    def as_tensor(self) -> np.ndarray:
        return self.rho.reshape(self.dim_a, self.dim_b, self.dim_a, self.dim_b)

    def reduced(self, side: str) -> np.ndarray:
        """Single-mode reduced density matrix for side 'a' or 'b'."""
        t = self.as_tensor()
        if side == "a":
            return np.trace(t, axis1=1, axis2=3)
        if side == "b":
            return np.trace(t, axis1=0, axis2=2)
        raise ValueError("side must be 'a' or 'b'")

    def check(self, tol: float = 1e-10) -> None:
        """Raise if not Hermitian, positive, and unit trace within tol."""
        if np.max(np.abs(self.rho - self.rho.conj().T)) > tol:
            raise ValueError("state not Hermitian within tolerance")
        w = np.linalg.eigvalsh((self.rho + self.rho.conj().T) / 2)
        if w.min() < -tol:
            raise ValueError(f"state has negative eigenvalue {w.min():.3e}")
        if abs(self.trace() - 1.0) > tol:
            raise ValueError("state trace differs from 1")


def trace_distance(s1: TwoModeState | np.ndarray, s2: TwoModeState | np.ndarray) -> float:
    """(1/2) * trace norm of the difference."""
    r1 = s1.rho if isinstance(s1, TwoModeState) else np.asarray(s1)
    r2 = s2.rho if isinstance(s2, TwoModeState) else np.asarray(s2)
    d = r1 - r2
    w = np.linalg.eigvalsh((d + d.conj().T) / 2)
    return float(0.5 * np.abs(w).sum())


def tmsv_coefficients(g: float, policy: TruncationPolicy | None = None) -> np.ndarray:
    """Schmidt weights lambda_n = tanh(g)^(2n) / cosh(g)^2 up to the cutoff."""
    if g < 0:
        raise ValueError("gain must be nonnegative")
    policy = policy or TruncationPolicy()
    d = policy.source_cutoff(g) + 1
    t2 = math.tanh(g) ** 2
    lam = (t2 ** np.arange(d)) / math.cosh(g) ** 2
    return lam


def _lg(n):
    return gammaln(n + 1.0)


def displacement_matrix(delta: complex, dim: int) -> FockOperator:
    """Matrix elements <n|D(delta)|m> from the finite double-factorial sum.

    <n|D|m> = e^(-|d|^2/2) sum_k sqrt(m! n!) d^(n-k) (-d*)^(m-k)
              / (k! (m-k)! (n-k)!),  k = 0..min(m, n).
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    delta = complex(delta)
    out = np.zeros((dim, dim), dtype=complex)
    if delta == 0:
        np.fill_diagonal(out, 1.0)
        return FockOperator(out)
    r = abs(delta)
    th = math.atan2(delta.imag, delta.real)
    logr = math.log(r)
    pref = math.exp(-0.5 * r * r)
    ks = np.arange(dim)
    lgk = _lg(ks)
    for n in range(dim):
        for m in range(dim):
            k = ks[: min(m, n) + 1]
            mag = np.exp(
                0.5 * (_lg(m) + _lg(n))
                - lgk[k]
                - lgk[m - k]
                - lgk[n - k]
                + (m + n - 2 * k) * logr
            )
            # phases: delta^(n-k) and (-conj(delta))^(m-k)
            ph = th * (n - k) + (math.pi - th) * (m - k)
            out[n, m] = pref * np.sum(mag * np.exp(1j * ph))
    return FockOperator(out)


def displacement_via_expm(delta: complex, dim: int) -> FockOperator:
    """Independent route: expm(delta a^dag - conj(delta) a) on the truncated basis."""
    a = np.diag(np.sqrt(np.arange(1, dim)), k=1).astype(complex)
    gen = delta * a.conj().T - np.conj(delta) * a
    return FockOperator(expm(gen))


def noclick_povm(eta_d: float, dim: int) -> FockOperator:
    """No-click element of an on-off detector: diag((1 - eta_d)^n)."""
    if not 0.0 <= eta_d <= 1.0:
        raise ValueError("eta_d must be in [0, 1]")
    return FockOperator(np.diag((1.0 - eta_d) ** np.arange(dim)).astype(complex))


def displaced_noclick_numeric(
    delta: complex, eta_d: float, dim: int, policy: TruncationPolicy | None = None
) -> FockOperator:
    """Numeric M_0 = D(delta) E_0 D(delta)^dag, truncated back to dim.

    Built on a larger basis (displacement headroom) so the returned block is
    accurate; the displacement comes from the matrix exponential, keeping
    this route independent of the closed-form matrix elements.
    """
    policy = policy or TruncationPolicy()
    big = policy.measurement_dim(dim, delta)
    d_op = displacement_via_expm(delta, big).entries
    e0 = (1.0 - eta_d) ** np.arange(big)
    m_big = (d_op * e0) @ d_op.conj().T
    return FockOperator(m_big[:dim, :dim])


def loss_kraus(r_t: float, dim: int) -> list[np.ndarray]:
    """Kraus operators of a loss channel with loss probability r_t per photon."""
    if not 0.0 <= r_t < 1.0 + 1e-15:
        raise ValueError("r_t must be in [0, 1)")
    eta = 1.0 - r_t
    ops = []
    ns = np.arange(dim)
    for k in range(dim):
        amp = np.zeros((dim, dim))
        n = ns[k:]
        # <n-k| K_k |n> = sqrt(C(n,k) eta^(n-k) r_t^k)
        logc = _lg(n) - _lg(k) - _lg(n - k)
        with np.errstate(divide="ignore"):
            val = np.exp(
                0.5 * (logc + (n - k) * (math.log(eta) if eta > 0 else -math.inf)
                       + k * (math.log(r_t) if r_t > 0 else -math.inf))
            )
        if r_t == 0.0:
            val = np.ones_like(n, dtype=float) if k == 0 else np.zeros_like(n, dtype=float)
        amp[n - k, n] = val
        ops.append(amp.astype(complex))
    return ops


def loss_channel(state: TwoModeState, mode: str, r_t: float) -> TwoModeState:
    """Apply photon loss with probability r_t to one mode ('a' or 'b')."""
    if mode not in ("a", "b"):
        raise ValueError("mode must be 'a' or 'b'")
    da, db = state.dim_a, state.dim_b
    t = state.as_tensor()
    dim = da if mode == "a" else db
    out = np.zeros_like(t)
    for kmat in loss_kraus(r_t, dim):
        if mode == "a":
            # rho' = (K x I) rho (K x I)^dag
            out += np.einsum("ij,jbkl,mk->ibml", kmat, t, kmat.conj())
        else:
            out += np.einsum("ij,xjyl,ml->xiym", kmat, t, kmat.conj())
    return TwoModeState(out.reshape(da * db, da * db), da, db)


def _party_tensor(amps: np.ndarray, r_t: float) -> np.ndarray:
    """Purified source-plus-loss tensor T[n_kept, j_arrived, k_lost].

    The source emits n photon pairs with amplitude amps[n]; the transmitted
    half is split photon by photon, arriving with probability 1 - r_t.
    """
    d = amps.shape[0]
    ta = math.sqrt(max(1.0 - r_t, 0.0))
    ra = math.sqrt(max(r_t, 0.0))
    out = np.zeros((d, d, d), dtype=complex)
    for n in range(d):
        for j in range(n + 1):
            c = math.exp(0.5 * (_lg(n) - _lg(j) - _lg(n - j)))
            out[n, j, n - j] = amps[n] * c * ta**j * ra ** (n - j)
    return out


def _herald_from_branches(m_a: np.ndarray, m_b: np.ndarray, vis: float):
    """Conditional state from the two click-origin amplitudes.

    m_a: amplitude tensor [a_kept, a_lost, b_kept, b_lost] for the click
    photon originating at Alice; m_b: same for Bob.  Partial
    distinguishability scales the interference between the two origins by
    the real overlap vis; lost photons never interfere.  Returns the
    unnormalized kept-mode density tensor and its trace.
    """
    da, dxa, db, dyb = m_a.shape
    # rows index the kept modes, columns the traced-out lost modes
    fa = m_a.transpose(0, 2, 1, 3).reshape(da * db, dxa * dyb)
    fb = m_b.transpose(0, 2, 1, 3).reshape(da * db, dxa * dyb)
    mat = fa @ fa.conj().T + fb @ fb.conj().T
    if vis != 0.0:
        cross = fa @ fb.conj().T
        mat += vis * (cross + cross.conj().T)
    return mat, float(np.trace(mat).real)


def herald_single_click_1ph(
    g: float,
    r_t: float,
    eta_c: float = 1.0,
    policy: TruncationPolicy | None = None,
    vis: float = 1.0,
) -> tuple[TwoModeState, float]:
    """Heralded state and per-pattern heralding probability, one-photon scheme.

    Both parties run identical squeezed sources and send their transmitted
    halves to the central station, where they interfere on a balanced beam
    splitter.  The herald is a single photon at the detector whose input
    mode is (b + i a)/sqrt(2); the kept modes carry the conditional state.
    The probability is for this one click pattern and already includes the
    station detector efficiency eta_c as a multiplicative factor.
    """
    policy = policy or TruncationPolicy()
    lam = tmsv_coefficients(g, policy)
    amps = np.sqrt(lam)
    t = _party_tensor(amps, r_t)
    a0, a1 = t[:, 0, :], t[:, 1, :]
    # projector bra (<0,1| + i <1,0|)/sqrt(2) on the two arriving modes
    m_b = np.einsum("ax,by->axby", a0, a1) / math.sqrt(2.0)
    m_a = 1j * np.einsum("ax,by->axby", a1, a0) / math.sqrt(2.0)
    mat, tr = _herald_from_branches(m_a, m_b, vis)
    d = amps.shape[0]
    state = TwoModeState(mat / tr, d, d)
    return state, tr * eta_c


def herald_single_click_2ph(
    params: "TwoPhotonParams",
    policy: TruncationPolicy | None = None,
    vis: float = 1.0,
) -> tuple[TwoModeState, float]:
    """Heralded state and per-pattern heralding probability, two-photon scheme.

    Alice transmits the idler of her squeezed source; Bob splits a locally
    heralded photon, keeping the reflected part and transmitting the rest.
    Both transmitted beams suffer loss r_t before the central station, whose
    projector is sqrt(t_c)|0,1> + e^(i phase) sqrt(r_c)|1,0> on the
    (Alice, Bob) arriving modes; only the phase difference between Bob's
    splitter and the projector is observable and `params.phase` is that
    difference.  The returned probability is per click pattern, includes
    Bob's local heralding success P_s, and scales with eta_c.

    With `params.sppe` false, Bob's source is the full photon-number mixture
    selected by his inefficient herald (a diagnostics path; the closed forms
    elsewhere assume the single-photon limit).
    """
    policy = policy or TruncationPolicy()
    r_t = params.channel.r_t
    lam_a = tmsv_coefficients(params.g_a, policy)
    t_alice = _party_tensor(np.sqrt(lam_a), r_t)
    a0, a1 = t_alice[:, 0, :], t_alice[:, 1, :]
    sqtc = math.sqrt(params.t_c)
    sqrc = math.sqrt(params.r_c)
    phc = complex(math.cos(params.phase), math.sin(params.phase))

    def conditional(b_tensor):
        b0, b1 = b_tensor[:, 0, :], b_tensor[:, 1, :]
        m_b = sqtc * np.einsum("ax,by->axby", a0, b1)
        m_a = np.conj(phc) * sqrc * np.einsum("ax,by->axby", a1, b0)
        return _herald_from_branches(m_a, m_b, vis)

    if params.sppe:
        bob = _bob_split_tensor(1, params.t_s, r_t)
        mat, tr = conditional(bob)
        p_s = params.herald_success()
        da, db = a0.shape[0], bob.shape[0]
        return TwoModeState(mat / tr, da, db), tr * p_s * params.eta_c

    # general Bob gain: number-diagonal mixture selected by his on-off herald
    lam_b = tmsv_coefficients(params.g_b, policy)
    weights = lam_b * (1.0 - (1.0 - params.eta_s) ** np.arange(lam_b.shape[0]))
    db = lam_b.shape[0]
    da = a0.shape[0]
    total = np.zeros((da * db, da * db), dtype=complex)
    p = 0.0
    for n in range(1, db):
        if weights[n] == 0.0:
            continue
        bob = _bob_split_tensor(n, params.t_s, r_t, dim=db)
        mat, tr = conditional(bob)
        total += weights[n] * mat
        p += weights[n] * tr
    return TwoModeState(total / np.trace(total), da, db), p * params.eta_c


def _bob_split_tensor(n: int, t_s: float, r_t: float, dim: int | None = None) -> np.ndarray:
    """Bob tensor B[kept, arrived, lost] for n photons into the t_s splitter."""
    dim = dim or (n + 1)
    out = np.zeros((dim, dim, dim), dtype=complex)
    r_s = 1.0 - t_s
    ta = math.sqrt(max(1.0 - r_t, 0.0))
    ra = math.sqrt(max(r_t, 0.0))
    for l in range(n + 1):  # l photons transmitted toward the station
        csplit = math.exp(0.5 * (_lg(n) - _lg(l) - _lg(n - l)))
        base = csplit * math.sqrt(t_s) ** l * math.sqrt(r_s) ** (n - l)
        for j in range(l + 1):  # j of them survive the channel
            closs = math.exp(0.5 * (_lg(l) - _lg(j) - _lg(l - j)))
            out[n - l, j, l - j] += base * closs * ta**j * ra ** (l - j)
    return out


def numeric_probability(
    state: TwoModeState,
    delta_a: complex,
    delta_b: complex,
    eta_d: float,
    policy: TruncationPolicy | None = None,
) -> float:
    """Joint no-click probability Tr(rho M_0(delta_a) x M_0(delta_b))."""
    policy = policy or TruncationPolicy()
    _check_tail(state, policy)
    ma = displaced_noclick_numeric(delta_a, eta_d, state.dim_a, policy).entries
    mb = displaced_noclick_numeric(delta_b, eta_d, state.dim_b, policy).entries
    val = np.einsum("abcd,ca,db->", state.as_tensor(), ma, mb)
    return float(val.real)


def numeric_marginal(
    state: TwoModeState,
    side: str,
    delta: complex,
    eta_d: float,
    policy: TruncationPolicy | None = None,
) -> float:
    """Single-party no-click probability on the reduced state."""
    policy = policy or TruncationPolicy()
    _check_tail(state, policy)
    red = state.reduced(side)
    m = displaced_noclick_numeric(delta, eta_d, red.shape[0], policy).entries
    return float(np.trace(red @ m).real)


def _check_tail(state: TwoModeState, policy: TruncationPolicy) -> None:
    """Warn when the top truncated level still carries weight.

    The top-level population estimates the missing tail; heralding can
    amplify it well beyond the source tail bound, hence the slack factor.
    Modes of dimension <= 2 are exact (single-photon constructions), not
    truncations, and are skipped.
    """
    diag = np.real(np.diag(state.rho)).reshape(state.dim_a, state.dim_b)
    tail = 0.0
    if state.dim_a > 2:
        tail += diag[-1, :].sum()
    if state.dim_b > 2:
        tail += diag[:, -1].sum()
    if tail > max(1e4 * policy.tail_bound, 1e-14):
        warnings.warn(
            f"truncation residual {tail:.2e} above policy tail bound; "
            "results may be inaccurate",
            RuntimeWarning,
            stacklevel=3,
        )


def arrival_distribution_1ph(g: float, r_t: float, policy: TruncationPolicy | None = None) -> np.ndarray:
    """Distribution of the total photon number arriving at the station."""
    policy = policy or TruncationPolicy()
    lam = tmsv_coefficients(g, policy)
    d = lam.shape[0]
    ns = np.arange(d)
    q = np.zeros(d)
    for j in range(d):
        n = ns[j:]
        logc = _lg(n) - _lg(j) - _lg(n - j)
        q[j] = np.sum(lam[j:] * np.exp(logc) * (1.0 - r_t) ** j * r_t ** (n - j))
    return np.convolve(q, q)[: 2 * d - 1]


def arrival_distribution_2ph(
    g_a: float, r_t: float, t_s: float, policy: TruncationPolicy | None = None
) -> np.ndarray:
    """Arrival distribution with Bob in the single-photon limit."""
    policy = policy or TruncationPolicy()
    lam = tmsv_coefficients(g_a, policy)
    d = lam.shape[0]
    qa = np.zeros(d)
    for j in range(d):
        n = np.arange(j, d)
        logc = _lg(n) - _lg(j) - _lg(n - j)
        qa[j] = np.sum(lam[j:] * np.exp(logc) * (1.0 - r_t) ** j * r_t ** (n - j))
    p_send = t_s * (1.0 - r_t)
    qb = np.zeros(d)
    qb[0] = 1.0 - p_send
    qb[1] = p_send
    return np.convolve(qa, qb)[: 2 * d - 1]


def multiphoton_ratio_1ph(g: float, r_t: float) -> float:
    """Closed form for P(more than one arrival) / P(exactly one arrival)."""
    x = (1.0 - r_t) * math.sinh(g) ** 2
    return 0.5 * x * (3.0 + x)


def multiphoton_ratio_2ph(g_a: float, r_t: float) -> float:
    """Same ratio for the two-photon scheme with Bob in the single-photon limit."""
    return (1.0 - r_t) * math.sinh(g_a) ** 2
