"""Monte Carlo simulation of a full session on a binned turbulent channel.

The session is cut into bins of ``bin_size`` pulses, one probe period each.
Every bin draws one transmittance and then, for each Alice state (H, V, D, A)
and decoy, draws how many pulses end up as sifted correct bits and sifted
errors.  The matching and the orthogonal detector fire independently with the
analytic click and error probabilities; a double click is resolved to a
uniformly random bit.

Random numbers come from a Philox stream keyed by ``(seed, chunk index)``
where a chunk is a fixed block of bins, so a session is bit-identical no
matter how many workers simulate it.
"""
from __future__ import annotations

import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelParams, sample_transmittance
from .detection import (DETECTORS, DetectorNoise, ProtocolState, ReceiverModel,
                        SiftedCounts, basis_probabilities, click_probability,
                        error_probability)
from .finitekey import SecurityParams, key_length
from .selection import SelectionOutcome

__all__ = [
    "DEFAULT_BIN_SIZE",
    "COUNT_COLUMNS",
    "BinRecord",
    "SessionLog",
    "simulate_session",
    "expected_session_counts",
    "postselect",
    "empirical_key_rate",
    "write_session",
    "read_session",
]

# 25 MHz pulse rate over a 4 kHz probe rate
DEFAULT_BIN_SIZE = 6250
CHUNK_BINS = 1024
DECOYS = ("mu1", "mu2", "mu3")
COUNT_COLUMNS = tuple(f"{d}_{k}_{kind}" for d in DETECTORS for k in DECOYS
                      for kind in ("ok", "err"))
_BASIS_OF = {"H": "X", "V": "X", "D": "Z", "A": "Z"}


@dataclass(frozen=True)
class BinRecord:
    index: int
    eta_true: float
    eta_estimated: float
    counts: np.ndarray  # 24 columns, see COUNT_COLUMNS
    pulses: int

    @property
    def sifted(self) -> SiftedCounts:
        return _to_sifted(self.counts[None, :])


@dataclass(eq=False)
class SessionLog:
    eta_true: np.ndarray
    eta_estimated: np.ndarray
    counts: np.ndarray  # (n_bins, 24), at most bin_size per entry
    pulses: np.ndarray  # (n_bins,) int64
    state: ProtocolState
    seed: int
    config: dict = field(default_factory=dict)

    @property
    def n_bins(self) -> int:
        return int(self.pulses.size)

    @property
    def n_pulses(self) -> int:
        return int(self.pulses.sum())

    @property
    def bins(self):
        for i in range(self.n_bins):
            yield BinRecord(i, float(self.eta_true[i]), float(self.eta_estimated[i]),
                            self.counts[i], int(self.pulses[i]))

    @property
    def totals(self) -> SiftedCounts:
        return _to_sifted(self.counts)


def _to_sifted(counts: np.ndarray) -> SiftedCounts:
    """Aggregate 24-column rows into per-basis tallies."""
    c = np.asarray(counts).sum(axis=0, dtype=np.int64).reshape(4, 3, 2)  # detector, decoy, ok/err
    x = c[0] + c[1]
    z = c[2] + c[3]
    return SiftedCounts(x.sum(axis=1), x[:, 1], z.sum(axis=1), z[:, 1])


def category_probabilities(state: ProtocolState, rx: ReceiverModel, eta) -> np.ndarray:
    """Per-pulse probability of each of the 24 sifted outcomes, shape ``eta.shape + (24,)``."""
    eta = np.asarray(eta, dtype=float)[..., None]
    mu = np.asarray(state.mu)
    p_mu = np.asarray(state.p_mu)
    cols = []
    for d in DETECTORS:
        basis = _BASIS_OF[d]
        # Alice picks the basis, then one of two bit values
        w = p_mu * state.basis_prob(basis) * 0.5 * rx.bob_basis_prob(basis)
        c = click_probability(mu, eta, rx, d)
        e = error_probability(mu, eta, rx, d)
        both = c * e
        ok = w * (c * (1 - e) + 0.5 * both)
        err = w * (e * (1 - c) + 0.5 * both)
        cols.append(np.stack([ok, err], axis=-1))  # (..., 3, 2)
    return np.stack(cols, axis=-3).reshape(eta.shape[:-1] + (24,))


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(chunk,))
    return np.random.Generator(np.random.Philox(ss))


def _simulate_chunk(args):
    chunk, pulses, channel, state, rx, seed, probe_noise, eta_fixed = args
    rng = _chunk_rng(seed, chunk)
    n = pulses.size
    if eta_fixed is None:
        eta = sample_transmittance(channel, rng, size=n)
    else:
        eta = np.full(n, float(eta_fixed))
    if probe_noise > 0:
        est = eta * (1.0 + probe_noise * rng.standard_normal(n))
        est = np.clip(est, 1e-12, 1.0)
    else:
        est = eta.copy()
    probs = category_probabilities(state, rx, eta)
    counts = np.empty((n, 24), dtype=np.int32)
    remaining = pulses.astype(np.int64).copy()
    left = np.ones(n)
    # multinomial as a chain of conditional binomials
    for j in range(24):
        p = np.clip(probs[:, j] / np.maximum(left, 1e-300), 0.0, 1.0)
        counts[:, j] = rng.binomial(remaining, p)
        remaining -= counts[:, j]
        left -= probs[:, j]
    return eta, est, counts


def simulate_session(channel: ChannelParams, state: ProtocolState, rx: ReceiverModel,
                     n_pulses: int, bin_size: int = DEFAULT_BIN_SIZE, seed: int = 0,
                     probe_noise: float = 0.0, workers: int = 1,
                     eta_fixed: float | None = None) -> SessionLog:
    """Simulate ``n_pulses`` pulses in bins of constant transmittance.

    ``probe_noise`` is the relative rms error of the probe estimate of each
    bin's transmittance; ``eta_fixed`` replaces the channel draw with a
    constant (a static channel).
    """
    n_pulses = int(n_pulses)
    bin_size = int(bin_size)
    if not n_pulses >= bin_size >= 1:
        raise ValueError("need n_pulses >= bin_size >= 1")
    n_full, rest = divmod(n_pulses, bin_size)
    pulses = np.full(n_full + (1 if rest else 0), bin_size, dtype=np.int64)
    if rest:
        pulses[-1] = rest
    jobs = []
    for c, start in enumerate(range(0, pulses.size, CHUNK_BINS)):
        jobs.append((c, pulses[start:start + CHUNK_BINS], channel, state, rx, int(seed),
                     float(probe_noise), eta_fixed))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_simulate_chunk, jobs))
    else:
        parts = [_simulate_chunk(j) for j in jobs]
    config = dict(eta0=channel.eta0, sigma=channel.sigma, q_x=state.q_x,
                  p_mu=list(state.p_mu), mu=list(state.mu), n_pulses=n_pulses,
                  bin_size=bin_size, probe_noise=probe_noise, eta_fixed=eta_fixed,
                  receiver=_receiver_dict(rx))
    return SessionLog(np.concatenate([p[0] for p in parts]),
                      np.concatenate([p[1] for p in parts]),
                      np.concatenate([p[2] for p in parts]),
                      pulses, state, int(seed), config)


def expected_session_counts(log: SessionLog, rx: ReceiverModel,
                            mask=None) -> SiftedCounts:
    """Expected-count model summed bin by bin over the drawn transmittances."""
    keep = slice(None) if mask is None else mask
    eta, pulses = log.eta_true[keep], log.pulses[keep].astype(float)
    state = log.state
    p_mu = np.asarray(state.p_mu)
    out = {}
    for basis in ("X", "Z"):
        det, err = basis_probabilities(state, rx, eta, basis)
        w = p_mu * state.basis_prob(basis) * rx.bob_basis_prob(basis)
        out[basis] = (w * (pulses @ det), w * (pulses @ err))
    return SiftedCounts(out["X"][0], out["X"][1], out["Z"][0], out["Z"][1])


def postselect(log: SessionLog, eta_th: float, use_estimated: bool = False):
    """Counts and pulse total of bins whose transmittance is at least ``eta_th``."""
    eta = log.eta_estimated if use_estimated else log.eta_true
    keep = eta >= eta_th
    return _to_sifted(log.counts[keep]), int(log.pulses[keep].sum())


def empirical_key_rate(log: SessionLog, eta_th: float, sec: SecurityParams,
                       use_estimated: bool = False) -> SelectionOutcome:
    """Key rate per pulse sent from the bins surviving ``eta_th``."""
    counts, n_post = postselect(log, eta_th, use_estimated)
    n_total = log.n_pulses
    eta = log.eta_estimated if use_estimated else log.eta_true
    keep = eta >= eta_th
    if n_post > 0:
        eta_mean = float(np.average(log.eta_true[keep], weights=log.pulses[keep]))
        ell = key_length(counts, log.state, sec).ell
    else:
        eta_mean, ell = float(eta_th), 0
    return SelectionOutcome(float(eta_th), n_post / n_total, eta_mean, n_post,
                            ell / n_total, ell)


def _receiver_dict(rx: ReceiverModel) -> dict:
    return dict(noise={d: [rx.noise[d].y0, rx.noise[d].b] for d in DETECTORS},
                eta_bob=rx.eta_bob, eta_d=rx.eta_d, e_mis=rx.e_mis,
                bob_x_prob=rx.bob_x_prob)


def _receiver_from_dict(d: dict) -> ReceiverModel:
    noise = {k: DetectorNoise(*v) for k, v in d["noise"].items()}
    return ReceiverModel(noise, d["eta_bob"], d["eta_d"], d["e_mis"], d["bob_x_prob"])


def write_session(log: SessionLog, path) -> None:
    """Columnar text: ``#``-prefixed JSON header, then one row per bin.

    Columns are ``index eta_true eta_estimated`` followed by the 24
    :data:`COUNT_COLUMNS`.  Every bin holds ``bin_size`` pulses except a
    possibly shorter last one; both numbers are in the header.
    """
    header = dict(log.config, seed=log.seed)
    buf = io.StringIO()
    buf.write("# turbkd session v1\n")
    buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
    buf.write(" ".join(("index", "eta_true", "eta_estimated") + COUNT_COLUMNS) + "\n")
    for i in range(log.n_bins):
        row = [str(i), repr(float(log.eta_true[i])), repr(float(log.eta_estimated[i]))]
        row += [str(int(v)) for v in log.counts[i]]
        buf.write(" ".join(row) + "\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def read_session(path) -> SessionLog:
    with open(path) as fh:
        magic = fh.readline()
        if not magic.startswith("# turbkd session"):
            raise ValueError(f"{path}: not a session file")
        header = json.loads(fh.readline()[1:])
        names = fh.readline().split()
        if tuple(names[3:]) != COUNT_COLUMNS:
            raise ValueError(f"{path}: unexpected columns")
        data = np.loadtxt(fh, ndmin=2)
    n_pulses, bin_size = int(header["n_pulses"]), int(header["bin_size"])
    n_bins = data.shape[0]
    pulses = np.full(n_bins, bin_size, dtype=np.int64)
    pulses[-1] = n_pulses - bin_size * (n_bins - 1)
    state = ProtocolState(header["q_x"], tuple(header["p_mu"]), tuple(header["mu"]))
    seed = header.pop("seed")
    return SessionLog(data[:, 1].copy(), data[:, 2].copy(),
                      data[:, 3:].astype(np.int32), pulses, state, seed, header)


def session_receiver(log: SessionLog) -> ReceiverModel:
    return _receiver_from_dict(log.config["receiver"])
