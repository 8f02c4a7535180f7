"""Infinite-key decoy-state rate as a function of channel transmittance.

With an infinite number of decoys the single-photon yield and error rate are
known exactly from the receiver model, and the asymptotic rate is

    R(eta) = q { Q_1 [1 - h(e_1)] - f_ec Q_mu h(E_mu) }

where ``Q_mu`` is the signal detection probability, ``E_mu`` its error rate,
``Q_1 = mu e^-mu Y_1`` the single-photon gain and ``q`` the fraction of pulses
that are signal pulses sifted into the key basis.  Gains and error rates are
averaged over the two detectors of the key (X) basis.  The rate is clamped at
zero, so integrating it against the channel density from 0 or from the
critical transmittance gives the same number.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .channel import ChannelParams, QUAD_EPSABS, QUAD_EPSREL
from .detection import (BASIS_DETECTORS, ORTHOGONAL, ProtocolState, ReceiverModel,
                        background_probability, click_probability, error_probability)
from .finitekey import binary_entropy

__all__ = [
    "LinearRateFit",
    "RateCurve",
    "NoKeyError",
    "gllp_rate",
    "critical_transmittance",
    "rate_wise_bound",
    "rate_curve",
    "linear_fit",
]

CR_TOL = 1e-6


class NoKeyError(RuntimeError):
    """The asymptotic rate is zero on the whole of (0, 1]."""


@dataclass(frozen=True)
class LinearRateFit:
    alpha: float
    beta: float
    max_residual: float  # max |fit - rate| over the fitted points / max rate there


@dataclass(frozen=True)
class RateCurve:
    eta: np.ndarray
    rate: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        rate = np.asarray(self.rate, dtype=float)
        if eta.shape != rate.shape or eta.ndim != 1:
            raise ValueError("eta and rate must be 1-d arrays of equal length")
        if np.any(np.diff(eta) <= 0):
            raise ValueError("eta must be strictly increasing")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "rate", rate)


def _raw_gllp(eta, state: ProtocolState, rx: ReceiverModel, f_ec: float):
    eta = np.asarray(eta, dtype=float)
    mu = state.mu[0]
    s = eta * rx.efficiency
    labels = BASIS_DETECTORS["X"]
    q_mu = np.mean([click_probability(mu, eta, rx, d) for d in labels], axis=0)
    err_mu = np.mean([error_probability(mu, eta, rx, d) for d in labels], axis=0)
    y1 = np.mean([1 - (1 - background_probability(rx.noise[d], eta)) * (1 - s)
                  for d in labels], axis=0)
    err1 = np.mean([1 - (1 - background_probability(rx.noise[ORTHOGONAL[d]], eta))
                    * (1 - rx.e_mis * s) for d in labels], axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        e_mu = np.where(q_mu > 0, err_mu / q_mu, 0.5)
        e_1 = np.where(y1 > 0, err1 / y1, 0.5)
    q1 = mu * math.exp(-mu) * y1
    gain = q1 * (1 - binary_entropy(np.minimum(e_1, 0.5)))
    leak = f_ec * q_mu * binary_entropy(np.minimum(e_mu, 0.5))
    # error rates at or above one half leave nothing to distil
    bad = (e_mu >= 0.5) | (e_1 >= 0.5)
    q = state.q_x * rx.bob_x_prob * state.p_mu[0]
    return np.where(bad, 0.0, q * (gain - leak))


def gllp_rate(eta, state: ProtocolState, rx: ReceiverModel, f_ec: float = 1.16):
    """Asymptotic secure bits per sent pulse at transmittance ``eta``, >= 0."""
    out = np.maximum(_raw_gllp(eta, state, rx, f_ec), 0.0)
    return out if out.ndim else float(out)


def critical_transmittance(state: ProtocolState, rx: ReceiverModel,
                           f_ec: float = 1.16, tol: float = CR_TOL) -> float:
    """Transmittance below which the asymptotic rate vanishes.

    A geometric scan ``1e-5 * 2**j`` brackets the first positive rate, then
    bisection narrows the bracket to ``tol``.
    """
    def positive(e):
        return _raw_gllp(e, state, rx, f_ec) > 0

    lo = 0.0
    hi = None
    e = 1e-5
    while e < 1.0:
        if positive(e):
            hi = e
            break
        lo = e
        e *= 2.0
    if hi is None:
        if positive(1.0):
            hi = 1.0
        else:
            raise NoKeyError("asymptotic rate is zero for every transmittance")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if positive(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def rate_wise_bound(channel: ChannelParams, state: ProtocolState, rx: ReceiverModel,
                    f_ec: float = 1.16) -> float:
    """Rate averaged over the channel density, ``int_0^1 R(eta) p(eta) d eta``.

    Integrated in ``u = ln eta`` from the critical transmittance upward.
    """
    try:
        eta_cr = critical_transmittance(state, rx, f_ec)
    except NoKeyError:
        return 0.0
    m = channel.log_mean
    s = channel.sigma
    lo = max(math.log(max(eta_cr - CR_TOL, 1e-300)), m - 40 * s)
    if lo >= 0.0:
        return 0.0

    def f(u):
        z = (u - m) / s
        return gllp_rate(math.exp(u), state, rx, f_ec) * math.exp(-0.5 * z * z) / (
            math.sqrt(2 * math.pi) * s)

    points = [m] if lo < m < 0.0 else None
    val, _ = integrate.quad(f, lo, 0.0, epsabs=QUAD_EPSABS * 1e-3, epsrel=QUAD_EPSREL,
                            points=points, limit=200)
    return val


def rate_curve(state: ProtocolState, rx: ReceiverModel, f_ec: float = 1.16,
               eta=None) -> RateCurve:
    if eta is None:
        eta = np.linspace(1e-3, 1.0, 1000)
    eta = np.asarray(eta, dtype=float)
    return RateCurve(eta, gllp_rate(eta, state, rx, f_ec))


def linear_fit(curve: RateCurve, eta_min: float) -> LinearRateFit:
    """Least-squares line through the curve points with ``eta >= eta_min``."""
    sel = curve.eta >= eta_min
    if np.count_nonzero(sel) < 3:
        raise ValueError("need at least three points above eta_min")
    x, y = curve.eta[sel], curve.rate[sel]
    alpha, beta = np.polyfit(x, y, 1)
    scale = np.max(np.abs(y))
    resid = np.max(np.abs(alpha * x + beta - y)) / scale if scale > 0 else 0.0
    return LinearRateFit(float(alpha), float(beta), float(resid))
