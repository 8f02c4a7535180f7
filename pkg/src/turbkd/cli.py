"""Batch command line: ``turbkd <subcommand> --config FILE [--set s.k=v ...]``.

Every subcommand writes ``<name>.csv`` into the output directory, where
``<name>`` is the subcommand with dashes turned into underscores; most also
write ``<name>_summary.csv`` and, unless ``output.plot`` is false,
``<name>.svg``.  Each CSV opens with ``#`` comment lines
echoing the fully resolved configuration.

Exit status: 0 success, 2 configuration error, 3 no key for the scenario,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .asymptotic import (NoKeyError, critical_transmittance, linear_fit, rate_curve,
                         rate_wise_bound)
from .config import ConfigError, ScenarioConfig, load_config
from .finitekey import DegenerateDecoyError
from .montecarlo import (empirical_key_rate, expected_session_counts, simulate_session,
                         write_session)
from .optimizer import OptimizationProblem, optimize_state
from .probe import CalibrationError, FitFailure, round_trip, write_calibration
from .selection import arts_scan, finite_selected_rate, prts_rate, selected_batch
from .studies import improvement, threshold_study
from .svgplot import line_plot
from . import presets

EXIT_OK, EXIT_CONFIG, EXIT_NO_KEY, EXIT_NUMERICAL = 0, 2, 3, 4


class NoKey(Exception):
    """The scenario ran but produced no secure key."""


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Run:
    """Output plumbing shared by the subcommands."""

    def __init__(self, command: str, cfg: ScenarioConfig, out_dir: str):
        self.command = command
        self.stem = command.replace("-", "_")
        self.cfg = cfg
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.written = []

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def write_csv(self, name: str, columns, rows) -> None:
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            fh.write(f"# turbkd {__version__} {self.command}\n")
            for line in self.cfg.echo():
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_cell(v) for v in row])
        self.written.append(p)

    def write_summary(self, items) -> None:
        self.write_csv(f"{self.stem}_summary.csv", ("quantity", "value"), items)

    def plot(self, series, xlabel, ylabel, title="", logy=False, markers=False) -> None:
        if not self.cfg.get("output", "plot"):
            return
        p = self.path(f"{self.stem}.svg")
        line_plot(p, series, xlabel, ylabel, title, logy, markers)
        self.written.append(p)


def _policy(cfg: ScenarioConfig):
    mode = cfg.get("selection", "mode")
    if mode == "arts":
        return dict(policy="scan", grid=cfg.grid())
    if mode == "none":
        return dict(policy="none")
    cutoff = cfg.get("selection", "cutoff")
    if cutoff == "critical":
        raise ConfigError("optimising under prts needs a numeric selection.cutoff")
    return dict(policy="fixed", eta_th=cutoff)


def _optimize(cfg: ScenarioConfig):
    prob = OptimizationProblem(cfg.channel_assumed(), cfg.receiver(), cfg.security(),
                               mu3=cfg.get("protocol", "mu3"), **_policy(cfg))
    loss = cfg.channel_assumed().loss_db
    near = min(presets.OPTIMIZED_STATES_FREE, key=lambda k: (abs(k - loss), k))
    return optimize_state(prob, seed=cfg.seed, n_starts=cfg.get("protocol", "n_starts"),
                          initial=(presets.OPTIMIZED_STATES_FREE[near],),
                          workers=cfg.get("simulation", "workers"))


def _state(cfg: ScenarioConfig):
    st = cfg.state()
    if st is None:
        res = _optimize(cfg)
        if res.state is None:
            raise NoKey("no feasible protocol state")
        st = res.state
    return st


def cmd_rate_curve(run: Run) -> str:
    cfg = run.cfg
    st, rx, f_ec = _state(cfg), cfg.receiver(), cfg.get("security", "f_ec")
    eta = np.linspace(1e-3, 1.0, cfg.get("study", "curve_points"))
    curve = rate_curve(st, rx, f_ec, eta)
    run.write_csv("rate_curve.csv", ("eta", "rate"), zip(curve.eta, curve.rate))
    run.plot([("R(eta)", curve.eta, curve.rate)], "transmittance", "asymptotic key rate")
    try:
        eta_cr = critical_transmittance(st, rx, f_ec)
    except NoKeyError:
        run.write_summary([("eta_cr", "nan"), ("rate_wise_bound", 0.0)])
        raise NoKey("asymptotic rate is zero at every transmittance") from None
    bound = rate_wise_bound(cfg.channel_true(), st, rx, f_ec)
    fit = linear_fit(curve, cfg.get("study", "fit_eta_min"))
    run.write_summary([("eta_cr", eta_cr), ("rate_wise_bound", bound),
                       ("fit_alpha", fit.alpha), ("fit_beta", fit.beta),
                       ("fit_max_residual", fit.max_residual)])
    return f"eta_cr = {eta_cr:.6f}"


def cmd_optimize(run: Run) -> str:
    cfg = run.cfg
    res = _optimize(cfg)
    rows = []
    if res.state is not None:
        st = res.state
        true_rate = finite_selected_rate(res.eta_th, cfg.channel_true(), st,
                                         cfg.receiver(), cfg.security()).rate
        rows.append((st.q_x, *st.p_mu, *st.mu, res.eta_th, res.rate, true_rate,
                     res.n_evals))
    run.write_csv("optimize.csv", ("q_x", "p_mu1", "p_mu2", "p_mu3", "mu1", "mu2", "mu3",
                                   "eta_th", "rate_assumed", "rate_true", "n_evals"), rows)
    if not res.found_key:
        raise NoKey("optimiser found no state with a positive key")
    return f"rate = {res.rate:.4g} at eta_th = {res.eta_th:g}"


def _outcome_rows(outcomes, best=None):
    for i, o in enumerate(outcomes):
        yield (o.eta_th, o.survival, o.eta_mean, o.n_post, o.ell, o.rate, i == best)


_OUTCOME_COLUMNS = ("eta_th", "survival", "eta_mean", "n_post", "ell", "rate", "best")


def cmd_scan(run: Run) -> str:
    cfg = run.cfg
    st = _state(cfg)
    scan = arts_scan(cfg.grid(), cfg.channel_true(), st, cfg.receiver(), cfg.security())
    run.write_csv("scan.csv", _OUTCOME_COLUMNS, _outcome_rows(scan.outcomes, scan.best))
    run.plot([("ARTS", scan.thresholds, scan.rates)], "transmittance cutoff",
             "secure key rate", logy=True, markers=True)
    b = scan.best_outcome
    if b.ell == 0:
        raise NoKey("no cutoff on the grid yields a key")
    return f"best cutoff {b.eta_th:g}, rate {b.rate:.4g}"


def cmd_prts(run: Run) -> str:
    cfg = run.cfg
    st, rx, sec, ch = _state(cfg), cfg.receiver(), cfg.security(), cfg.channel_true()
    cutoff = cfg.get("selection", "cutoff")
    if cutoff == "critical":
        try:
            cutoff = critical_transmittance(st, rx, sec.f_ec)
        except NoKeyError:
            raise NoKey("no asymptotic cutoff exists") from None
        source = "critical"
    else:
        source = "prefixed"
    o = prts_rate(ch, st, rx, sec, cutoff=cutoff)
    scan = arts_scan(cfg.grid(), ch, st, rx, sec)
    run.write_csv("prts.csv", ("cutoff_source",) + _OUTCOME_COLUMNS[:-1]
                  + ("arts_eta_th", "arts_rate"),
                  [(source, o.eta_th, o.survival, o.eta_mean, o.n_post, o.ell, o.rate,
                    scan.best_outcome.eta_th, scan.best_outcome.rate)])
    if o.ell == 0:
        raise NoKey(f"cutoff {o.eta_th:g} yields no key")
    return f"cutoff {o.eta_th:g}: rate {o.rate:.4g}"


def cmd_simulate(run: Run) -> str:
    cfg = run.cfg
    st, rx, ch = _state(cfg), cfg.receiver(), cfg.channel_true()
    sim = cfg.values["simulation"]
    n = int(sim["n_pulses"])
    sec = cfg.security().with_n(n)
    log = simulate_session(ch, st, rx, n, sim["bin_size"], cfg.seed, sim["probe_noise"],
                           sim["workers"])
    if sim["write_session"]:
        write_session(log, run.path("session.txt"))
        run.written.append(run.path("session.txt"))
    grid = cfg.grid()
    analytic = selected_batch(grid, ch, st, rx, sec)
    rows, emp = [], []
    for i, t in enumerate(grid):
        o = empirical_key_rate(log, t, sec, sim["use_estimated"])
        emp.append(o.rate)
        rows.append((t, o.survival, o.n_post, o.ell, o.rate, analytic["survival"][i],
                     analytic["ell"][i], analytic["rate"][i]))
    run.write_csv("simulate.csv", ("eta_th", "survival", "n_post", "ell", "rate",
                                   "analytic_survival", "analytic_ell", "analytic_rate"), rows)
    obs, exp = log.totals, expected_session_counts(log, rx)
    summary = []
    for name in ("n_x", "m_x", "n_z", "m_z"):
        for k in range(3):
            o, e = float(getattr(obs, name)[k]), float(getattr(exp, name)[k])
            z = (o - e) / np.sqrt(e) if e > 0 else 0.0
            summary += [(f"{name}_mu{k + 1}_observed", o), (f"{name}_mu{k + 1}_expected", e),
                        (f"{name}_mu{k + 1}_z", z)]
    i_emp = int(np.argmax(emp))
    i_ana = int(np.argmax(analytic["rate"]))
    summary += [("empirical_argmax", grid[i_emp]), ("analytic_argmax", grid[i_ana]),
                ("n_bins", log.n_bins)]
    run.write_summary(summary)
    run.plot([("simulated", grid, emp), ("analytic", grid, analytic["rate"])],
             "transmittance cutoff", "secure key rate", logy=True, markers=True)
    if max(emp) <= 0:
        raise NoKey("simulated session yields no key at any cutoff")
    return f"empirical argmax {grid[i_emp]:g}, analytic argmax {grid[i_ana]:g}"


def cmd_threshold_study(run: Run) -> str:
    cfg = run.cfg
    s = cfg.values["study"]
    pts = threshold_study(s["losses"], s["sigmas"], s["n_values"], cfg.receiver(),
                          cfg.security(), seed=cfg.seed,
                          n_starts=cfg.get("protocol", "n_starts"),
                          workers=cfg.get("simulation", "workers"))
    rows = []
    for p in pts:
        free = p.state_free if p.state_free else (float("nan"),) * 5
        rows.append((p.loss_db, p.sigma, p.n_total, p.eta_th, p.rate, *free))
    run.write_csv("threshold_study.csv", ("loss_db", "sigma", "n_total", "eta_th", "rate",
                                          "q_x", "p_mu1", "p_mu2", "mu1", "mu2"), rows)
    series = []
    for n_total in s["n_values"]:
        for sigma in s["sigmas"]:
            sel = [p for p in pts if p.n_total == n_total and p.sigma == sigma]
            series.append((f"N={n_total:g} sigma={sigma:g}", [p.loss_db for p in sel],
                           [p.eta_th for p in sel]))
    run.plot(series, "mean loss (dB)", "optimal cutoff", markers=True)
    if all(p.rate <= 0 for p in pts):
        raise NoKey("no scenario point yields a key")
    return f"{len(pts)} points"


def _improvement_job(args):
    rx, sec, sigma, target, seed, n_starts = args
    try:
        r = improvement(rx, sec, sigma=sigma, target=target, seed=seed, n_starts=n_starts)
    except ValueError:
        # target out of reach even at the lowest loss tried
        return (float("nan"),) * 3
    return r.loss_without, r.loss_with, r.extension_db


def cmd_improvement(run: Run) -> str:
    cfg = run.cfg
    s = cfg.values["study"]
    sec, sigma = cfg.security(), cfg.get("channel", "sigma")
    jobs = [(cfg.receiver(y0=y0), sec, sigma, s["target_rate"], cfg.seed,
             cfg.get("protocol", "n_starts")) for y0 in s["y0_values"]]
    workers = cfg.get("simulation", "workers")
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            results = list(ex.map(_improvement_job, jobs))
    else:
        results = [_improvement_job(j) for j in jobs]
    rows = [(y0, s["target_rate"], *r) for y0, r in zip(s["y0_values"], results)]
    run.write_csv("improvement.csv", ("y0", "target_rate", "loss_without_db",
                                      "loss_with_db", "extension_db"), rows)
    run.plot([("extension", [np.log10(r[0]) for r in rows], [r[4] for r in rows])],
             "log10 Y0", "loss extension (dB)", markers=True)
    missing = [r[0] for r in rows if np.isnan(r[4])]
    if missing:
        raise NoKey("target rate unreachable for Y0 = " + ", ".join(f"{v:g}" for v in missing))
    return ", ".join(f"Y0={r[0]:g}: +{r[4]:.2f} dB" for r in rows)


def cmd_calibrate(run: Run) -> str:
    cfg = run.cfg
    p = cfg.values["probe"]
    rng = np.random.default_rng(cfg.seed)
    test = np.linspace(0.01, 0.3, p["n_test"])
    res = round_trip(rng, p["relative_noise"], p["n_cal"], p["degree"], test_eta=test,
                     method=p["method"])
    write_calibration(res["calibration"], run.path("calibration.txt"))
    run.written.append(run.path("calibration.txt"))
    rel = (res["estimate"] - res["eta"]) / res["eta"]
    run.write_csv("calibrate.csv", ("eta", "estimate", "relative_error"),
                  zip(res["eta"], res["estimate"], rel))
    run.write_summary([("rms_relative_error", res["rms_relative_error"]),
                       ("degree", res["calibration"].degree)])
    run.plot([("estimate", res["eta"], res["estimate"]), ("truth", res["eta"], res["eta"])],
             "programmed transmittance", "estimated transmittance", markers=True)
    return f"rms relative error {res['rms_relative_error']:.4%}"


COMMANDS = {
    "rate-curve": cmd_rate_curve,
    "optimize": cmd_optimize,
    "scan": cmd_scan,
    "prts": cmd_prts,
    "simulate": cmd_simulate,
    "threshold-study": cmd_threshold_study,
    "improvement": cmd_improvement,
    "calibrate": cmd_calibrate,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="turbkd", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"turbkd {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="sectioned key = value scenario file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value; repeatable, later wins")
        p.add_argument("--seed", type=int, help="overrides simulation.seed")
        p.add_argument("--out", help="output directory (overrides output.dir)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set, args.seed)
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        run = Run(args.command, cfg, args.out or cfg.get("output", "dir"))
        message = COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"turbkd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoKey as exc:
        print(f"turbkd {args.command}: no key: {exc}")
        return EXIT_NO_KEY
    except (FitFailure, CalibrationError, DegenerateDecoyError, ArithmeticError,
            np.linalg.LinAlgError) as exc:
        print(f"turbkd {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"turbkd {args.command}: {message}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
