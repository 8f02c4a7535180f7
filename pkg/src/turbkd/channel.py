"""Lognormal model of a turbulent free-space channel.

The instantaneous transmittance ``eta`` follows

    p(eta) = exp(-(ln(eta/eta0) + sigma**2/2)**2 / (2 sigma**2)) / (sqrt(2 pi) sigma eta)

so that the mean over (0, inf) is exactly ``eta0``.  Integrals used by the
post-selection machinery run over ``[eta_th, 1]`` without renormalising the
(negligible) mass above one.  All quadratures are carried out in ``u = ln eta``
where the integrand is a plain Gaussian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

__all__ = [
    "ChannelParams",
    "TurbulencePath",
    "pdtc_density",
    "survival_fraction",
    "partial_first_moment",
    "truncated_mean",
    "sample_transmittance",
    "sigma_from_path",
    "EmptySelectionError",
]

QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-9


class EmptySelectionError(ValueError):
    """No probability mass survives the requested threshold."""


@dataclass(frozen=True)
class ChannelParams:
    """Lognormal turbulence statistics: mean transmittance and log-irradiance std."""

    eta0: float
    sigma: float

    def __post_init__(self):
        if not (0.0 < self.eta0 <= 1.0):
            raise ValueError(f"eta0 must lie in (0, 1], got {self.eta0}")
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @classmethod
    def from_loss_db(cls, loss_db: float, sigma: float) -> "ChannelParams":
        """Build from a mean channel loss in dB, ``eta0 = 10**(-loss_db/10)``."""
        return cls(10.0 ** (-loss_db / 10.0), sigma)

    @property
    def loss_db(self) -> float:
        return -10.0 * math.log10(self.eta0)

    @property
    def log_mean(self) -> float:
        """Mean of ``ln eta``."""
        return math.log(self.eta0) - 0.5 * self.sigma**2


@dataclass(frozen=True)
class TurbulencePath:
    """Horizontal path with constant refractive-index structure constant."""

    cn2: float  # m^(-2/3)
    wavelength: float  # m
    length: float  # m

    def __post_init__(self):
        for name in ("cn2", "wavelength", "length"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength


def pdtc_density(eta, p: ChannelParams):
    """Probability density of the transmittance coefficient.

    Accepts scalars or arrays; raises ``ValueError`` for ``eta <= 0``.
    """
    eta_arr = np.asarray(eta, dtype=float)
    if np.any(eta_arr <= 0.0):
        raise ValueError("transmittance must be strictly positive")
    s = p.sigma
    z = (np.log(eta_arr / p.eta0) + 0.5 * s * s) / s
    out = np.exp(-0.5 * z * z) / (math.sqrt(2.0 * math.pi) * s * eta_arr)
    return out if out.ndim else float(out)


def _check_threshold(eta_th: float) -> float:
    eta_th = float(eta_th)
    if not (0.0 <= eta_th <= 1.0):
        raise ValueError(f"threshold must lie in [0, 1], got {eta_th}")
    return eta_th


def _gaussian_u(u: float, mean: float, s: float) -> float:
    z = (u - mean) / s
    return math.exp(-0.5 * z * z) / (math.sqrt(2.0 * math.pi) * s)


def _log_bounds(eta_th: float, p: ChannelParams) -> tuple[float, float]:
    # lower edge of u-integration: 0 maps to -inf, truncated at 40 sigma
    lo_floor = p.log_mean - 40.0 * p.sigma
    lo = math.log(eta_th) if eta_th > 0.0 else lo_floor
    return max(lo, lo_floor), 0.0


@lru_cache(maxsize=65536)
def _moment(eta_th: float, eta0: float, sigma: float, order: int) -> float:
    p = ChannelParams(eta0, sigma)
    lo, hi = _log_bounds(eta_th, p)
    if lo >= hi:
        return 0.0
    m = p.log_mean
    if order == 0:
        f = lambda u: _gaussian_u(u, m, sigma)
    else:
        f = lambda u: math.exp(u) * _gaussian_u(u, m, sigma)
    # split at the Gaussian peak when it lies inside the interval
    points = [m] if lo < m < hi else None
    val, _ = integrate.quad(f, lo, hi, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL,
                            points=points, limit=200)
    return max(val, 0.0)


def survival_fraction(eta_th: float, p: ChannelParams) -> float:
    """Probability mass of the density on ``[eta_th, 1]``."""
    # quadrature round-off can push the full-interval mass a hair above 1
    return min(_moment(_check_threshold(eta_th), p.eta0, p.sigma, 0), 1.0)


def partial_first_moment(eta_th: float, p: ChannelParams) -> float:
    """``int_{eta_th}^1 eta p(eta) d eta``."""
    return _moment(_check_threshold(eta_th), p.eta0, p.sigma, 1)


def truncated_mean(eta_th: float, p: ChannelParams) -> float:
    """Mean transmittance of the bins kept above ``eta_th``.

    Raises
    ------
    EmptySelectionError
        If no mass survives the threshold.
    """
    eta_th = _check_threshold(eta_th)
    if eta_th >= 1.0:
        raise EmptySelectionError("threshold at 1 keeps nothing")
    s0 = survival_fraction(eta_th, p)
    if s0 <= 0.0:
        raise EmptySelectionError(f"no mass above threshold {eta_th}")
    mean = partial_first_moment(eta_th, p) / s0
    # quadrature round-off can leave the ratio a hair outside [eta_th, 1]
    return min(max(mean, eta_th), 1.0)


def sample_transmittance(p: ChannelParams, stream: np.random.Generator, size=None):
    """Draw transmittances from the density conditioned on ``eta <= 1``.

    ``ln eta`` is Gaussian; draws above one are rejected and redrawn.
    """
    n = 1 if size is None else int(np.prod(size))
    out = np.empty(n)
    filled = 0
    mean = p.log_mean
    while filled < n:
        need = n - filled
        u = stream.normal(mean, p.sigma, size=need + need // 8 + 8)
        u = u[u <= 0.0][:need]
        out[filled:filled + u.size] = np.exp(u)
        filled += u.size
    if size is None:
        return float(out[0])
    return out.reshape(size)


def sigma_from_path(path: TurbulencePath) -> float:
    """Plane-wave scintillation: ``sigma**2 = 1.23 Cn2 k**(7/6) L**(11/6)``."""
    var = 1.23 * path.cn2 * path.wavenumber ** (7.0 / 6.0) * path.length ** (11.0 / 6.0)
    return math.sqrt(var)
