"""Transmittance post-selection: adaptive threshold scans and prefixed cutoffs.

Bins whose transmittance falls below ``eta_th`` are dropped.  The survivors
are treated as a static channel at their mean transmittance, so the finite-size
pipeline runs on ``N_post = round(N * survival)`` pulses and the resulting key
is quoted per pulse *sent*, ``R = ell / N``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .asymptotic import critical_transmittance, gllp_rate
from .channel import ChannelParams, survival_fraction, truncated_mean
from .detection import ProtocolState, ReceiverModel, basis_probabilities
from .finitekey import SecurityParams, key_length_batch

__all__ = [
    "DEFAULT_GRID",
    "SelectionOutcome",
    "ThresholdScanResult",
    "selected_batch",
    "finite_selected_rate",
    "arts_scan",
    "prts_rate",
    "asymptotic_selected_rate",
]

DEFAULT_GRID = tuple(np.round(np.arange(0, 41) * 0.0025, 6))


@dataclass(frozen=True)
class SelectionOutcome:
    eta_th: float
    survival: float
    eta_mean: float
    n_post: int
    rate: float
    ell: int = 0


@dataclass(frozen=True)
class ThresholdScanResult:
    outcomes: tuple
    best: int

    @property
    def best_outcome(self) -> SelectionOutcome:
        return self.outcomes[self.best]

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([o.eta_th for o in self.outcomes])

    @property
    def rates(self) -> np.ndarray:
        return np.array([o.rate for o in self.outcomes])


def _selection_stats(thresholds, channel: ChannelParams):
    surv = np.empty(len(thresholds))
    mean = np.empty(len(thresholds))
    for i, t in enumerate(thresholds):
        surv[i] = survival_fraction(t, channel) if t < 1.0 else 0.0
        mean[i] = truncated_mean(t, channel) if surv[i] > 0 else t
    return surv, mean


def selected_batch(thresholds, channel: ChannelParams, state: ProtocolState,
                   rx: ReceiverModel, sec: SecurityParams) -> dict:
    """Finite-size selected rate at many thresholds in one vectorised pass."""
    thresholds = np.asarray(thresholds, dtype=float)
    surv, mean = _selection_stats(thresholds, channel)
    n_post = np.rint(sec.n_total * surv)
    p_mu = np.asarray(state.p_mu)
    counts = {}
    for basis in ("X", "Z"):
        det, err = basis_probabilities(state, rx, mean, basis)
        w = n_post[:, None] * p_mu * state.basis_prob(basis) * rx.bob_basis_prob(basis)
        counts[basis] = (w * det, w * err)
    kl = key_length_batch(counts["X"][0], counts["X"][1], counts["Z"][0], counts["Z"][1],
                          state, sec)
    empty = n_post <= 0
    ell = np.where(empty, 0.0, kl["ell"])
    return dict(eta_th=thresholds, survival=surv, eta_mean=mean, n_post=n_post,
                ell=ell, ell_raw=kl["ell_raw"], rate=ell / sec.n_total)


def _outcomes(batch) -> list:
    return [SelectionOutcome(float(t), float(s), float(m), int(n), float(r), int(e))
            for t, s, m, n, r, e in zip(batch["eta_th"], batch["survival"],
                                        batch["eta_mean"], batch["n_post"],
                                        batch["rate"], batch["ell"])]


def finite_selected_rate(eta_th: float, channel: ChannelParams, state: ProtocolState,
                         rx: ReceiverModel, sec: SecurityParams) -> SelectionOutcome:
    """Finite-size key rate after discarding bins below ``eta_th``."""
    if not 0.0 <= eta_th <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return _outcomes(selected_batch([eta_th], channel, state, rx, sec))[0]


def _argmax_first(rates) -> int:
    # np.argmax returns the first maximiser, i.e. the smallest threshold on ties
    return int(np.argmax(np.asarray(rates)))


def arts_scan(grid, channel: ChannelParams, state: ProtocolState, rx: ReceiverModel,
              sec: SecurityParams) -> ThresholdScanResult:
    """Evaluate every threshold of an ascending grid and locate the best."""
    grid = np.asarray(list(grid), dtype=float)
    if grid.size == 0:
        raise ValueError("threshold grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("threshold grid must be strictly ascending")
    batch = selected_batch(grid, channel, state, rx, sec)
    return ThresholdScanResult(tuple(_outcomes(batch)), _argmax_first(batch["rate"]))


def prts_rate(channel: ChannelParams, state: ProtocolState, rx: ReceiverModel,
              sec: SecurityParams, cutoff: float | None = None) -> SelectionOutcome:
    """Rate with a cutoff fixed before the session.

    With ``cutoff=None`` the threshold is the critical transmittance of the
    receiver and state; the channel statistics are not consulted for it.
    """
    eta_th = critical_transmittance(state, rx, sec.f_ec) if cutoff is None else cutoff
    return finite_selected_rate(eta_th, channel, state, rx, sec)


def asymptotic_selected_rate(eta_th: float, channel: ChannelParams, state: ProtocolState,
                             rx: ReceiverModel, f_ec: float = 1.16) -> float:
    """Infinite-key rate of the surviving bins, ``R(<eta>) * survival``."""
    surv = survival_fraction(eta_th, channel) if eta_th < 1.0 else 0.0
    if surv <= 0.0:
        return 0.0
    return gllp_rate(truncated_mean(eta_th, channel), state, rx, f_ec) * surv
