"""Choice of Alice's free parameters ``(q_x, P_mu1, P_mu2, mu1, mu2)``.

The objective is the finite-size selected key rate under the channel Alice
believes in.  Search is a multi-start coordinate descent with shrinking steps
in the unit box, seeded by a Latin hypercube.  Where the key is zero the
search climbs the unclamped key length instead, which keeps the plateaus from
stalling every start.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import qmc

from .channel import ChannelParams
from .detection import ProtocolState, ReceiverModel
from .finitekey import SecurityParams
from .selection import DEFAULT_GRID, selected_batch

__all__ = [
    "DEFAULT_BOUNDS",
    "OptimizationProblem",
    "OptimizationResult",
    "objective",
    "optimize_state",
]

INFEASIBLE = -math.inf

DEFAULT_BOUNDS = (
    (0.5, 0.99),   # q_x
    (0.01, 0.98),  # P_mu1
    (0.01, 0.98),  # P_mu2
    (0.1, 1.0),    # mu1
    (0.01, 0.5),   # mu2
)

MIN_VACUUM_PROB = 1e-3


@dataclass(frozen=True, eq=False)
class OptimizationProblem:
    """What Alice optimises for.

    ``policy`` is ``"scan"`` (best threshold on ``grid``), ``"fixed"`` (use
    ``eta_th``) or ``"none"`` (no post-selection).
    """

    channel_assumed: ChannelParams
    rx: ReceiverModel
    sec: SecurityParams
    policy: str = "scan"
    eta_th: float = 0.0
    grid: tuple = DEFAULT_GRID
    bounds: tuple = DEFAULT_BOUNDS
    mu3: float = 0.002

    def __post_init__(self):
        if self.policy not in ("scan", "fixed", "none"):
            raise ValueError(f"unknown threshold policy {self.policy!r}")
        if len(self.bounds) != 5:
            raise ValueError("need bounds for the five free parameters")

    @property
    def thresholds(self):
        if self.policy == "scan":
            return self.grid
        if self.policy == "fixed":
            return (self.eta_th,)
        return (0.0,)


@dataclass
class OptimizationResult:
    state: ProtocolState | None
    rate: float
    eta_th: float
    score: float
    n_evals: int
    start_rates: list = field(default_factory=list)

    @property
    def found_key(self) -> bool:
        return self.rate > 0


def _feasible(x, prob: OptimizationProblem) -> ProtocolState | None:
    q_x, p1, p2, mu1, mu2 = x
    for v, (lo, hi) in zip(x, prob.bounds):
        if not lo <= v <= hi:
            return None
    if 1.0 - p1 - p2 < MIN_VACUUM_PROB:
        return None
    if not mu1 > mu2 + prob.mu3 or not mu2 > prob.mu3:
        return None
    return ProtocolState.from_free(q_x, p1, p2, mu1, mu2, prob.mu3)


def _evaluate(state: ProtocolState, prob: OptimizationProblem):
    """(rate, best threshold, surrogate score) for a feasible state."""
    b = selected_batch(prob.thresholds, prob.channel_assumed, state, prob.rx, prob.sec)
    n = prob.sec.n_total
    i = int(np.argmax(b["rate"]))
    if b["rate"][i] > 0:
        return float(b["rate"][i]), float(b["eta_th"][i]), float(b["rate"][i])
    j = int(np.argmax(b["ell_raw"]))
    # strictly below zero so any real key outranks it
    return 0.0, float(b["eta_th"][j]), min(float(b["ell_raw"][j]) / n, 0.0) - 1e-300


def objective(params: ProtocolState, prob: OptimizationProblem) -> float:
    """Selected key rate for ``params``; infeasible points return ``-inf``."""
    if params.violations() or _feasible(params.free, prob) is None:
        return INFEASIBLE
    return _evaluate(params, prob)[0]


def _to_box(x, bounds):
    return np.array([(v - lo) / (hi - lo) for v, (lo, hi) in zip(x, bounds)])


def _from_box(u, bounds):
    return np.array([lo + ui * (hi - lo) for ui, (lo, hi) in zip(u, bounds)])


def _descend(u0, prob: OptimizationProblem, step=0.08, min_step=2e-4, max_evals=4000):
    def score(u):
        st = _feasible(_from_box(u, prob.bounds), prob)
        if st is None:
            return INFEASIBLE
        return _evaluate(st, prob)[2]

    u = np.clip(np.asarray(u0, dtype=float), 0.0, 1.0)
    best = score(u)
    evals = 1
    while step >= min_step and evals < max_evals:
        improved = False
        for k in range(len(u)):
            for sign in (1.0, -1.0):
                trial = u.copy()
                trial[k] = min(max(trial[k] + sign * step, 0.0), 1.0)
                if trial[k] == u[k]:
                    continue
                val = score(trial)
                evals += 1
                if val > best:
                    # keep moving along a successful direction
                    while True:
                        nxt = trial.copy()
                        nxt[k] = min(max(nxt[k] + sign * step, 0.0), 1.0)
                        if nxt[k] == trial[k]:
                            break
                        v2 = score(nxt)
                        evals += 1
                        if v2 > val:
                            trial, val = nxt, v2
                        else:
                            break
                    u, best, improved = trial, val, True
                    break
        if not improved:
            step *= 0.5
    return u, best, evals


def _run_start(args):
    u0, prob = args
    return _descend(u0, prob)


def _seeds(prob: OptimizationProblem, n_starts: int, seed, initial):
    sampler = qmc.LatinHypercube(d=5, seed=np.random.default_rng(seed))
    starts = [_to_box(np.asarray(x, dtype=float), prob.bounds) for x in initial]
    starts += list(sampler.random(max(n_starts - len(starts), 0)))
    return [np.clip(s, 0.0, 1.0) for s in starts]


def optimize_state(prob: OptimizationProblem, seed=0, n_starts: int = 16,
                   initial=(), workers: int = 1) -> OptimizationResult:
    """Maximise the selected key rate over Alice's free parameters.

    ``initial`` holds extra starting points as free-parameter tuples; they
    occupy the first start slots.  The winner is the best score, ties going
    to the lowest start index, so the result does not depend on ``workers``.
    """
    starts = _seeds(prob, n_starts, seed, initial)
    jobs = [(u, prob) for u in starts]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_start, jobs))
    else:
        results = [_run_start(j) for j in jobs]

    best_i = max(range(len(results)), key=lambda i: (results[i][1], -i))
    u, sc, _ = results[best_i]
    n_evals = sum(r[2] for r in results)
    start_rates = [max(r[1], 0.0) for r in results]
    if sc == INFEASIBLE:
        return OptimizationResult(None, 0.0, 0.0, sc, n_evals, start_rates)
    state = _feasible(_from_box(u, prob.bounds), prob)
    rate, eta_th, score = _evaluate(state, prob)
    return OptimizationResult(state, rate, eta_th, score, n_evals, start_rates)
