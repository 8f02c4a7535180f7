"""Finite-size key length for decoy-state BB84 with two decoys.

Decoy bounds with Hoeffding-type finite-sample corrections, the phase-error
estimate from the diagonal basis, and the extractable key length

    ell = floor(s_x0 + s_x1 (1 - h(phi_x)) - n_x f_ec h(e_obs)
                - 6 log2(21/eps_sec) - log2(2/eps_cor))

The statistical correction on the phase error is

    gamma(a, b, c, d) = sqrt((c + d)(1 - b) b / (c d ln 2)
                             * log2((c + d) / (c d (1 - b) b) * 21**2 / a**2))

evaluated with ``a = eps_sec``, ``b = v_z1/s_z1``, ``c = s_z1``, ``d = s_x1``.
It is isolated in :func:`gamma_uncertainty` so an alternative bound can be
substituted in one place.

Every public function accepts real-valued (expected) or integer (simulated)
counts; the vectorised :func:`key_length_batch` evaluates many count sets at
once and is what the optimiser calls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .detection import ProtocolState, SiftedCounts

__all__ = [
    "SecurityParams",
    "KeyLengthBreakdown",
    "DegenerateDecoyError",
    "binary_entropy",
    "tau",
    "count_bound",
    "s0_lower",
    "s1_lower",
    "v1_upper",
    "gamma_uncertainty",
    "phi_upper",
    "key_length",
    "key_length_batch",
]


class DegenerateDecoyError(ValueError):
    """Decoy configuration makes a bound undefined."""


@dataclass(frozen=True)
class SecurityParams:
    """Security and post-processing settings.

    ``weighted_v1`` selects the intensity-weighted single-photon error bound
    ``tau1 (mu2 m+_mu2 - mu3 m-_mu3) / (mu2 - mu3)``; ``False`` selects the
    unweighted ``tau1 (m+_mu2 - m-_mu3) / (mu2 - mu3)``.  The weighted form
    stays above the true single-photon error count only while errors are
    dominated by detector background, which holds for the laboratory
    receiver but not for near-noiseless ones.
    """

    eps_sec: float = 1e-10
    eps_cor: float = 1e-15
    f_ec: float = 1.16
    n_total: float = 3e10
    weighted_v1: bool = True

    def __post_init__(self):
        if not 0 < self.eps_sec < 1 or not 0 < self.eps_cor < 1:
            raise ValueError("security parameters must lie in (0, 1)")
        if self.f_ec < 1:
            raise ValueError("f_ec must be >= 1")
        if self.n_total < 1:
            raise ValueError("n_total must be >= 1")

    @property
    def log_term(self) -> float:
        """``ln(21/eps_sec)``, shared by all deviation terms."""
        return math.log(21.0 / self.eps_sec)

    @property
    def overhead_bits(self) -> float:
        return 6.0 * math.log2(21.0 / self.eps_sec) + math.log2(2.0 / self.eps_cor)

    def with_n(self, n_total: float) -> "SecurityParams":
        return replace(self, n_total=n_total)


@dataclass(frozen=True)
class KeyLengthBreakdown:
    s_x0: float
    s_x1: float
    s_z0: float
    s_z1: float
    v_z1: float
    phi_x: float
    e_obs: float
    n_x: float
    ell_raw: float  # before flooring and clamping, used as a search surrogate
    ell: int


def binary_entropy(x):
    """Binary entropy in bits with ``h(0) = h(1) = 0``."""
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)):
        raise ValueError("binary entropy needs 0 <= x <= 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -x * np.log2(x) - (1 - x) * np.log2(1 - x)
    out = np.where((x == 0) | (x == 1), 0.0, out)
    return out if out.ndim else float(out)


def tau(n: int, state: ProtocolState) -> float:
    """Probability that an ``n``-photon pulse is sent, mixing over the decoys."""
    if n < 0:
        raise ValueError("photon number must be >= 0")
    mu = np.asarray(state.mu)
    p = np.asarray(state.p_mu)
    with np.errstate(divide="ignore", invalid="ignore"):
        # 0**0 == 1 for the vacuum term
        powers = np.where(mu == 0, 1.0 if n == 0 else 0.0, mu**n)
    return float(np.sum(np.exp(-mu) * powers * p) / math.factorial(n))


def _deviation(n_b, sec: SecurityParams):
    return np.sqrt(np.asarray(n_b, dtype=float) / 2.0 * sec.log_term)


def count_bound(n_bk, n_b, k: int, state: ProtocolState, sec: SecurityParams,
                direction: int = +1):
    """Finite-sample bound on the decoy-``k`` count, rescaled by ``e^mu_k / P_mu_k``.

    ``direction`` is +1 for the upper and -1 for the lower bound; the lower
    bound is clamped at zero.
    """
    p_k = state.p_mu[k]
    if p_k <= 0:
        raise DegenerateDecoyError(f"decoy {k} is never sent")
    scale = math.exp(state.mu[k]) / p_k
    d = _deviation(n_b, sec)
    if direction > 0:
        return scale * (np.asarray(n_bk) + d)
    return scale * np.maximum(np.asarray(n_bk) - d, 0.0)


def _bounds(n, sec, state):
    """Lower and upper rescaled counts for all decoys, ``n`` has last axis 3."""
    n = np.asarray(n, dtype=float)
    p = np.asarray(state.p_mu)
    if np.any(p <= 0):
        raise DegenerateDecoyError("every decoy needs a positive probability")
    scale = np.exp(np.asarray(state.mu)) / p
    d = _deviation(n.sum(axis=-1), sec)[..., None]
    return scale * np.maximum(n - d, 0.0), scale * (n + d)


def _check_weak_vacuum(state):
    _, mu2, mu3 = state.mu
    if mu2 == mu3:
        raise DegenerateDecoyError("weak and vacuum intensities coincide")


def _s0(lo, hi, state, tau0):
    _, mu2, mu3 = state.mu
    val = tau0 * (mu2 * lo[..., 2] - mu3 * hi[..., 1]) / (mu2 - mu3)
    return np.maximum(val, 0.0)


def _s1(lo, hi, s0, state, tau0, tau1):
    mu1, mu2, mu3 = state.mu
    denom = mu1 * (mu2 - mu3) - mu2**2 + mu3**2
    if denom <= 0:
        raise DegenerateDecoyError("decoy intensities violate mu1(mu2-mu3) > mu2^2 - mu3^2")
    inner = (lo[..., 1] - hi[..., 2]
             - (mu2**2 - mu3**2) / mu1**2 * (hi[..., 0] - s0 / tau0))
    return np.maximum(tau1 * mu1 * inner / denom, 0.0)


def _v1(lo, hi, state, tau1, weighted=True):
    _, mu2, mu3 = state.mu
    if weighted:
        val = mu2 * hi[..., 1] - mu3 * lo[..., 2]
    else:
        val = hi[..., 1] - lo[..., 2]
    return np.maximum(tau1 * val / (mu2 - mu3), 0.0)


def _basis_counts(counts: SiftedCounts, basis: str):
    return counts.n_x if basis == "X" else counts.n_z


def s0_lower(counts: SiftedCounts, state: ProtocolState, sec: SecurityParams,
             basis: str = "X") -> float:
    """Lower bound on detections from vacuum pulses."""
    _check_weak_vacuum(state)
    lo, hi = _bounds(_basis_counts(counts, basis), sec, state)
    return float(_s0(lo, hi, state, tau(0, state)))


def s1_lower(counts: SiftedCounts, state: ProtocolState, sec: SecurityParams,
             s0: float, basis: str = "X") -> float:
    """Lower bound on detections from single-photon pulses."""
    _check_weak_vacuum(state)
    lo, hi = _bounds(_basis_counts(counts, basis), sec, state)
    return float(_s1(lo, hi, s0, state, tau(0, state), tau(1, state)))


def v1_upper(counts: SiftedCounts, state: ProtocolState, sec: SecurityParams) -> float:
    """Upper bound on diagonal-basis bit errors from single-photon pulses."""
    _check_weak_vacuum(state)
    lo, hi = _bounds(counts.m_z, sec, state)
    return float(_v1(lo, hi, state, tau(1, state), sec.weighted_v1))


def _gamma(eps, ratio, c, d):
    ratio = np.asarray(ratio, dtype=float)
    c = np.asarray(c, dtype=float)
    d = np.asarray(d, dtype=float)
    ok = (ratio > 0) & (ratio < 1) & (c > 0) & (d > 0)
    r = np.where(ok, ratio, 0.25)
    cc = np.where(ok, c, 1.0)
    dd = np.where(ok, d, 1.0)
    var = (cc + dd) * (1 - r) * r / (cc * dd * math.log(2))
    arg = (cc + dd) / (cc * dd * (1 - r) * r) * 21.0**2 / eps**2
    val = np.sqrt(np.maximum(var * np.log2(arg), 0.0))
    return np.where(ok, val, 0.0)


def gamma_uncertainty(eps: float, ratio: float, s_z1: float, s_x1: float) -> float:
    """Statistical correction added to the single-photon phase-error ratio.

    Returns the formula's limit 0 when ``ratio`` is 0 or 1; a phase error of
    one is saturated by the 0.5 cap in :func:`phi_upper` regardless.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    if s_z1 <= 0 or s_x1 <= 0:
        raise ValueError("sample sizes must be positive")
    return float(_gamma(eps, ratio, s_z1, s_x1))


def _phi(v1, s_z1, s_x1, eps):
    s_z1 = np.asarray(s_z1, dtype=float)
    ok = s_z1 > 0
    ratio = np.where(ok, v1 / np.where(ok, s_z1, 1.0), 0.5)
    ratio = np.clip(ratio, 0.0, 1.0)
    phi = ratio + _gamma(eps, ratio, s_z1, s_x1)
    return np.where(ok, np.minimum(phi, 0.5), 0.5)


def phi_upper(counts: SiftedCounts, state: ProtocolState, sec: SecurityParams,
              s_z1: float, s_x1: float) -> float:
    """Phase-error upper bound for the key basis, capped at 0.5.

    Raises ``ValueError`` when there are no single-photon statistics in Z.
    """
    if s_z1 <= 0:
        raise ValueError("no single-photon statistics in the Z basis")
    v1 = v1_upper(counts, state, sec)
    return float(_phi(v1, s_z1, s_x1, sec.eps_sec))


def _h(x):
    x = np.clip(x, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -x * np.log2(x) - (1 - x) * np.log2(1 - x)
    return np.where((x == 0) | (x == 1), 0.0, out)


def key_length_batch(n_x, m_x, n_z, m_z, state: ProtocolState, sec: SecurityParams):
    """Vectorised key length over leading axes of ``(..., 3)`` count arrays.

    Returns a dict of arrays with the same keys as :class:`KeyLengthBreakdown`.
    """
    _check_weak_vacuum(state)
    n_x = np.asarray(n_x, dtype=float)
    m_x = np.asarray(m_x, dtype=float)
    tau0, tau1 = tau(0, state), tau(1, state)

    lo_x, hi_x = _bounds(n_x, sec, state)
    lo_z, hi_z = _bounds(n_z, sec, state)
    lo_mz, hi_mz = _bounds(m_z, sec, state)

    s_x0 = _s0(lo_x, hi_x, state, tau0)
    s_x1 = _s1(lo_x, hi_x, s_x0, state, tau0, tau1)
    s_z0 = _s0(lo_z, hi_z, state, tau0)
    s_z1 = _s1(lo_z, hi_z, s_z0, state, tau0, tau1)
    v_z1 = _v1(lo_mz, hi_mz, state, tau1, sec.weighted_v1)
    phi = _phi(v_z1, s_z1, s_x1, sec.eps_sec)

    nx_tot = n_x.sum(axis=-1)
    mx_tot = m_x.sum(axis=-1)
    e_obs = np.where(nx_tot > 0, mx_tot / np.where(nx_tot > 0, nx_tot, 1.0), 0.0)
    e_obs = np.clip(e_obs, 0.0, 1.0)

    raw = (s_x0 + s_x1 * (1.0 - _h(phi)) - nx_tot * sec.f_ec * _h(e_obs)
           - sec.overhead_bits)
    # beyond 0.5 the error-correction leak is a full bit per detection
    raw = np.where(e_obs >= 0.5, s_x0 + s_x1 * (1.0 - _h(phi)) - nx_tot * sec.f_ec
                   - sec.overhead_bits, raw)
    ell = np.where(e_obs >= 0.5, 0.0, np.maximum(np.floor(raw), 0.0))
    return dict(s_x0=s_x0, s_x1=s_x1, s_z0=s_z0, s_z1=s_z1, v_z1=v_z1, phi_x=phi,
                e_obs=e_obs, n_x=nx_tot, ell_raw=raw, ell=ell)


def key_length(counts: SiftedCounts, state: ProtocolState,
               sec: SecurityParams) -> KeyLengthBreakdown:
    """Extractable key length with every intermediate bound."""
    out = key_length_batch(counts.n_x, counts.m_x, counts.n_z, counts.m_z, state, sec)
    vals = {k: float(v) for k, v in out.items()}
    vals["ell"] = int(vals["ell"])
    return KeyLengthBreakdown(**vals)
