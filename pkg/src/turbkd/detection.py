"""Receiver response and expected sifted counts.

Per detector ``i`` the click probability for a coherent pulse of mean photon
number ``mu`` is ``1 - (1 - p_bg_i) exp(-eta_sys mu)`` and the probability that
the orthogonal detector fires (a bit error) is
``1 - (1 - p_bg_perp) exp(-e_mis eta_sys mu)``, with
``eta_sys = eta * eta_bob * eta_d`` and a background ``p_bg = Y0 + b eta``.

A sifted detection in a basis is a click on either detector of that basis, so
the expected detection count adds both probabilities and the error count keeps
only the orthogonal one.  X is the rectilinear (H/V) basis, Z the diagonal
(D/A) basis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

__all__ = [
    "DETECTORS",
    "BASIS_DETECTORS",
    "ORTHOGONAL",
    "DetectorNoise",
    "ReceiverModel",
    "ProtocolState",
    "SiftedCounts",
    "background_probability",
    "click_probability",
    "error_probability",
    "expected_counts",
]

DETECTORS = ("H", "V", "D", "A")
BASIS_DETECTORS = MappingProxyType({"X": ("H", "V"), "Z": ("D", "A")})
ORTHOGONAL = MappingProxyType({"H": "V", "V": "H", "D": "A", "A": "D"})


@dataclass(frozen=True)
class DetectorNoise:
    y0: float
    b: float

    def __post_init__(self):
        if self.y0 < 0 or self.b < 0 or self.y0 + self.b > 1:
            raise ValueError(f"invalid detector noise y0={self.y0}, b={self.b}")


@dataclass(frozen=True, eq=False)
class ReceiverModel:
    """Bob's detection setup."""

    noise: dict  # label -> DetectorNoise
    eta_bob: float
    eta_d: float
    e_mis: float
    bob_x_prob: float = 0.5

    def __post_init__(self):
        noise = dict(self.noise)
        missing = set(DETECTORS) - set(noise)
        if missing:
            raise ValueError(f"missing detector noise for {sorted(missing)}")
        object.__setattr__(self, "noise", {d: noise[d] for d in DETECTORS})
        for name in ("eta_bob", "eta_d", "e_mis", "bob_x_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @classmethod
    def uniform(cls, y0: float, b: float, eta_bob: float, eta_d: float,
                e_mis: float, bob_x_prob: float = 0.5) -> "ReceiverModel":
        """Four identical detectors."""
        n = DetectorNoise(y0, b)
        return cls({d: n for d in DETECTORS}, eta_bob, eta_d, e_mis, bob_x_prob)

    @property
    def efficiency(self) -> float:
        """Receiver transmission times detector efficiency (excludes the channel)."""
        return self.eta_bob * self.eta_d

    def bob_basis_prob(self, basis: str) -> float:
        return self.bob_x_prob if basis == "X" else 1.0 - self.bob_x_prob

    def replace(self, **kw) -> "ReceiverModel":
        fields = dict(noise=self.noise, eta_bob=self.eta_bob, eta_d=self.eta_d,
                      e_mis=self.e_mis, bob_x_prob=self.bob_x_prob)
        fields.update(kw)
        return ReceiverModel(**fields)


@dataclass(frozen=True)
class ProtocolState:
    """Alice's transmit configuration.

    ``p_mu`` and ``mu`` are ordered (signal, weak decoy, vacuum decoy).
    """

    q_x: float
    p_mu: tuple
    mu: tuple

    def __post_init__(self):
        object.__setattr__(self, "p_mu", tuple(float(x) for x in self.p_mu))
        object.__setattr__(self, "mu", tuple(float(x) for x in self.mu))
        problems = self.violations()
        if problems:
            raise ValueError("invalid protocol state: " + "; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        if len(self.p_mu) != 3 or len(self.mu) != 3:
            return ["need exactly three decoy probabilities and intensities"]
        if not 0.0 <= self.q_x <= 1.0:
            out.append("q_x outside [0, 1]")
        if any(not 0.0 <= p <= 1.0 for p in self.p_mu):
            out.append("decoy probability outside [0, 1]")
        if abs(sum(self.p_mu) - 1.0) > 1e-12:
            out.append("decoy probabilities do not sum to 1")
        m1, m2, m3 = self.mu
        if not m3 >= 0.0:
            out.append("mu3 < 0")
        if not m2 > m3:
            out.append("mu2 <= mu3")
        if not m1 > m2 + m3:
            out.append("mu1 <= mu2 + mu3")
        return out

    @classmethod
    def from_free(cls, q_x, p1, p2, mu1, mu2, mu3=0.002) -> "ProtocolState":
        """Build from the optimiser's free parameters; the vacuum weight closes the simplex."""
        return cls(q_x, (p1, p2, 1.0 - p1 - p2), (mu1, mu2, mu3))

    def basis_prob(self, basis: str) -> float:
        return self.q_x if basis == "X" else 1.0 - self.q_x

    @property
    def free(self) -> tuple:
        return (self.q_x, self.p_mu[0], self.p_mu[1], self.mu[0], self.mu[1])


@dataclass
class SiftedCounts:
    """Per-decoy detection (n) and error (m) tallies in the X and Z bases.

    Arrays are indexed by decoy (signal, weak, vacuum).  Values are real for
    expectations and integer for simulated sessions.
    """

    n_x: np.ndarray = field(default_factory=lambda: np.zeros(3))
    m_x: np.ndarray = field(default_factory=lambda: np.zeros(3))
    n_z: np.ndarray = field(default_factory=lambda: np.zeros(3))
    m_z: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("n_x", "m_x", "n_z", "m_z"):
            setattr(self, name, np.asarray(getattr(self, name)))

    def __add__(self, other: "SiftedCounts") -> "SiftedCounts":
        return SiftedCounts(self.n_x + other.n_x, self.m_x + other.m_x,
                            self.n_z + other.n_z, self.m_z + other.m_z)

    def scaled(self, factor: float) -> "SiftedCounts":
        return SiftedCounts(self.n_x * factor, self.m_x * factor,
                            self.n_z * factor, self.m_z * factor)

    @property
    def total_x(self) -> float:
        return float(np.sum(self.n_x))

    @property
    def errors_x(self) -> float:
        return float(np.sum(self.m_x))

    @property
    def qber_x(self) -> float:
        n = self.total_x
        return self.errors_x / n if n > 0 else 0.0

    def is_consistent(self) -> bool:
        return bool(np.all(self.m_x <= self.n_x) and np.all(self.m_z <= self.n_z))


def background_probability(noise: DetectorNoise, eta):
    """``min(Y0 + b eta, 1)``."""
    return np.minimum(noise.y0 + noise.b * np.asarray(eta, dtype=float), 1.0)


def click_probability(mu, eta, rx: ReceiverModel, detector: str):
    """Probability that ``detector`` clicks when it is the matching detector."""
    p_bg = background_probability(rx.noise[detector], eta)
    return 1.0 - (1.0 - p_bg) * np.exp(-np.asarray(eta) * rx.efficiency * np.asarray(mu))


def error_probability(mu, eta, rx: ReceiverModel, detector: str):
    """Probability of an error click when Alice sent the state measured by ``detector``.

    Uses the background of the orthogonal detector.
    """
    perp = ORTHOGONAL[detector]
    p_bg = background_probability(rx.noise[perp], eta)
    return 1.0 - (1.0 - p_bg) * np.exp(
        -rx.e_mis * np.asarray(eta) * rx.efficiency * np.asarray(mu))


def basis_probabilities(state: ProtocolState, rx: ReceiverModel, eta, basis: str):
    """Per-pulse detection and error probabilities for each decoy in ``basis``.

    Returns two arrays of shape ``eta.shape + (3,)`` averaged over the two
    polarisations of the basis.  Basis-choice factors are not included.
    """
    eta = np.asarray(eta, dtype=float)[..., None]
    mu = np.asarray(state.mu)
    det = np.zeros(np.broadcast(eta, mu).shape)
    err = np.zeros_like(det)
    labels = BASIS_DETECTORS[basis]
    for d in labels:
        c = click_probability(mu, eta, rx, d)
        e = error_probability(mu, eta, rx, d)
        det += c + e
        err += e
    return det / len(labels), err / len(labels)


def expected_counts(state: ProtocolState, rx: ReceiverModel, eta_eff: float,
                    n_pulses: float) -> SiftedCounts:
    """Expected sifted tallies for ``n_pulses`` sent through a static channel."""
    p_mu = np.asarray(state.p_mu)
    out = {}
    for basis in ("X", "Z"):
        det, err = basis_probabilities(state, rx, eta_eff, basis)
        w = n_pulses * p_mu * state.basis_prob(basis) * rx.bob_basis_prob(basis)
        out[basis] = (w * det, w * err)
    return SiftedCounts(out["X"][0], out["X"][1], out["Z"][0], out["Z"][1])
