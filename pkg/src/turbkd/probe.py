"""Transmittance estimation from classical probe pulses.

Each probe period yields one oscilloscope frame holding a single Gaussian
pulse whose area scales with the channel transmittance.  The area is taken
either from a least-squares Gaussian fit or from a baseline-corrected sum of
the frame, and a monotone polynomial maps area back to transmittance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly

__all__ = [
    "PULSE_FWHM",
    "FRAME_LENGTH",
    "SAMPLE_RATE",
    "Waveform",
    "GaussianFitResult",
    "CalibrationPoly",
    "FitFailure",
    "CalibrationError",
    "synth_probe",
    "gaussian_fit",
    "frame_sum",
    "calibrate",
    "invert",
    "measure_area",
    "round_trip",
    "write_waveform",
    "read_waveform",
    "write_calibration",
    "read_calibration",
]

PULSE_FWHM = 3e-9
FRAME_LENGTH = 16e-9
SAMPLE_RATE = 5e9
_FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
# fitted peak over residual rms; pure-noise frames stay below about 4
MIN_PEAK_TO_NOISE = 8.0
_SQRT_2PI = math.sqrt(2.0 * math.pi)


class FitFailure(RuntimeError):
    """The Gaussian fit did not converge or ended on a degenerate pulse."""


class CalibrationError(ValueError):
    """Calibration data cannot support a monotone polynomial."""


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    dt: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1 or s.size < 8:
            raise ValueError("a waveform needs at least 8 samples")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "samples", s)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) * self.dt


@dataclass(frozen=True)
class GaussianFitResult:
    amplitude: float
    center: float
    width: float
    baseline: float
    area: float
    rms_residual: float
    iterations: int = 0


@dataclass(frozen=True)
class CalibrationPoly:
    coefficients: tuple  # low to high degree, area -> transmittance
    valid_area_range: tuple

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, area):
        return npoly.polyval(area, np.asarray(self.coefficients))


def synth_probe(eta: float, noise_rms: float, stream: np.random.Generator | None = None,
                full_scale: float = 1.0, fwhm: float = PULSE_FWHM,
                length: float = FRAME_LENGTH, rate: float = SAMPLE_RATE) -> Waveform:
    """One synthetic frame: a centered Gaussian of peak ``eta * full_scale`` plus white noise."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    dt = 1.0 / rate
    n = int(round(length * rate))
    t = np.arange(n) * dt
    sigma = fwhm * _FWHM_TO_SIGMA
    y = eta * full_scale * np.exp(-0.5 * ((t - 0.5 * length) / sigma) ** 2)
    if noise_rms > 0:
        if stream is None:
            raise ValueError("noise needs a random stream")
        y = y + noise_rms * stream.standard_normal(n)
    return Waveform(y, dt)


def _edge_baseline(y: np.ndarray) -> float:
    k = max(1, y.size // 10)
    return float(np.median(np.concatenate([y[:k], y[-k:]])))


def frame_sum(w: Waveform) -> float:
    """Baseline-subtracted sample sum times the sample interval."""
    y = w.samples
    return float((y - _edge_baseline(y)).sum() * w.dt)


def _model(p, t):
    a, c, s, b = p
    g = np.exp(-0.5 * ((t - c) / s) ** 2)
    return a * g + b, g


def gaussian_fit(w: Waveform, max_iter: int = 200, tol: float = 1e-12) -> GaussianFitResult:
    """Fit ``a exp(-(t-c)^2 / 2s^2) + b`` by damped Gauss-Newton.

    Time is rescaled to sample units internally.  Raises :class:`FitFailure`
    when the iteration does not settle or the pulse is not resolvable
    (non-positive amplitude, width below a fifth of a sample or wider than the
    frame, center outside the frame, peak under ``MIN_PEAK_TO_NOISE`` times
    the residual rms).
    """
    y = w.samples
    n = y.size
    t = np.arange(n, dtype=float)
    b0 = _edge_baseline(y)
    z = y - b0
    k = int(np.argmax(z))
    a0 = float(z[k])
    if not a0 > 0:
        raise FitFailure("no positive pulse in frame")
    wt = np.clip(z, 0.0, None)
    s0 = math.sqrt(max(float((wt * (t - k) ** 2).sum() / wt.sum()), 0.25))
    p = np.array([a0, float(k), s0, b0])
    r = y - _model(p, t)[0]
    cost = float(r @ r)
    lam = 1e-3
    it = 0
    converged = cost == 0.0
    while not converged and it < max_iter:
        it += 1
        a, c, s, _ = p
        _, g = _model(p, t)
        u = (t - c) / s
        jac = np.column_stack([g, a * g * u / s, a * g * u * u / s, np.ones(n)])
        jtj = jac.T @ jac
        grad = jac.T @ r
        while True:
            step = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj) + 1e-300), grad)
            trial = p + step
            if trial[2] <= 0:
                lam *= 10.0
                if lam > 1e16:
                    break
                continue
            with np.errstate(over="ignore", invalid="ignore"):
                r_new = y - _model(trial, t)[0]
                c_new = float(r_new @ r_new)
            if math.isfinite(c_new) and c_new <= cost:
                break
            lam *= 10.0
            if lam > 1e16:
                break
        if lam > 1e16:
            # no descent direction left: at a minimum to machine precision
            converged = True
            break
        small = np.all(np.abs(step) <= tol * (np.abs(p) + tol))
        drop = cost - c_new
        p, r, cost = trial, r_new, c_new
        lam = max(lam / 10.0, 1e-12)
        if small or drop <= tol * cost or cost == 0.0:
            converged = True
    if not converged:
        raise FitFailure(f"no convergence in {max_iter} iterations")
    a, c, s, b = p
    if not (a > 0 and 0.2 <= s <= n and 0.0 <= c <= n - 1):
        raise FitFailure("degenerate pulse parameters")
    rms = math.sqrt(cost / n)
    if a < MIN_PEAK_TO_NOISE * rms:
        raise FitFailure("pulse not resolved above the noise")
    width = s * w.dt
    amp = float(a)
    return GaussianFitResult(amp, float(c * w.dt), float(width), float(b),
                             amp * float(width) * _SQRT_2PI,
                             rms, it)


def measure_area(w: Waveform, method: str = "fit") -> float:
    if method == "fit":
        return gaussian_fit(w).area
    if method == "sum":
        return frame_sum(w)
    raise ValueError(f"unknown area method {method!r}")


def calibrate(pairs, degree: int = 3) -> CalibrationPoly:
    """Least-squares polynomial from measured area to programmed transmittance."""
    data = np.asarray(pairs, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError("pairs must be (area, transmittance) rows")
    area, eta = data[:, 0], data[:, 1]
    if np.unique(area).size < degree + 1:
        raise ValueError(f"degree {degree} needs at least {degree + 1} distinct areas")
    lo, hi = float(area.min()), float(area.max())
    # fit on a scaled axis for conditioning, then express in raw areas
    fit = np.polynomial.Polynomial.fit(area, eta, degree)
    coef = fit.convert().coef
    coef = np.pad(coef, (0, degree + 1 - coef.size))
    grid = np.linspace(lo, hi, 513)
    slope = fit.deriv()(grid)
    if np.any(slope <= 0):
        raise CalibrationError("calibration polynomial is not increasing over the data range")
    return CalibrationPoly(tuple(float(c) for c in coef), (lo, hi))


def invert(cal: CalibrationPoly, area):
    """Transmittance for ``area``; returns ``(eta, clamped)``.

    Areas outside the calibrated range are clamped to it and the result to
    [0, 1]; ``clamped`` flags either event.  Works on scalars and arrays.
    """
    a = np.asarray(area, dtype=float)
    lo, hi = cal.valid_area_range
    inside = (a >= lo) & (a <= hi)
    eta = cal(np.clip(a, lo, hi))
    flagged = ~inside | (eta < 0) | (eta > 1)
    eta = np.clip(eta, 0.0, 1.0)
    if eta.ndim == 0:
        return float(eta), bool(flagged)
    return eta, flagged


def round_trip(stream: np.random.Generator, relative_noise: float = 0.01, n_cal: int = 50,
               degree: int = 3, eta_range=(0.005, 0.35), test_eta=None,
               method: str = "fit") -> dict:
    """Calibrate on ``n_cal`` synthetic frames, then re-estimate ``test_eta``.

    The noise rms of every frame is ``relative_noise`` times its pulse peak,
    as for a scope whose vertical scale tracks the received pulse.  Returns
    the calibration, the estimates and their rms relative error.
    """
    def frame(e):
        return synth_probe(e, relative_noise * e, stream)

    cal_eta = np.linspace(*eta_range, n_cal)
    pairs = [(measure_area(frame(e), method), e) for e in cal_eta]
    cal = calibrate(pairs, degree)
    if test_eta is None:
        test_eta = np.linspace(0.01, 0.3, 30)
    test_eta = np.asarray(test_eta, dtype=float)
    est = np.array([invert(cal, measure_area(frame(e), method))[0] for e in test_eta])
    rms = float(np.sqrt(np.mean(((est - test_eta) / test_eta) ** 2)))
    return dict(calibration=cal, eta=test_eta, estimate=est, rms_relative_error=rms)


def write_waveform(w: Waveform, path) -> None:
    """Two columns: time in seconds, amplitude."""
    with open(path, "w") as fh:
        fh.write("# time_s amplitude\n")
        for t, y in zip(w.times, w.samples):
            fh.write(f"{float(t)!r} {float(y)!r}\n")


def read_waveform(path) -> Waveform:
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 2 or data.shape[0] < 8:
        raise ValueError(f"{path}: expected at least 8 rows of (time, amplitude)")
    steps = np.diff(data[:, 0])
    dt = float(steps.mean())
    if not np.allclose(steps, dt, rtol=1e-6, atol=0):
        raise ValueError(f"{path}: samples are not evenly spaced")
    return Waveform(data[:, 1], dt)


def write_calibration(cal: CalibrationPoly, path) -> None:
    with open(path, "w") as fh:
        fh.write("# turbkd probe calibration: area -> transmittance\n")
        fh.write(f"degree {cal.degree}\n")
        fh.write("coefficients " + " ".join(repr(float(c)) for c in cal.coefficients) + "\n")
        lo, hi = cal.valid_area_range
        fh.write(f"valid_area_range {float(lo)!r} {float(hi)!r}\n")


def read_calibration(path) -> CalibrationPoly:
    fields = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, *vals = line.split()
            fields[key] = vals
    try:
        degree = int(fields["degree"][0])
        coef = tuple(float(v) for v in fields["coefficients"])
        lo, hi = (float(v) for v in fields["valid_area_range"])
    except (KeyError, ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed calibration record") from exc
    if len(coef) != degree + 1:
        raise ValueError(f"{path}: degree and coefficient count disagree")
    return CalibrationPoly(coef, (lo, hi))
