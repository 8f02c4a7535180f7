from __future__ import annotations

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from turbkd import presets
from turbkd.detection import (DETECTORS, DetectorNoise, ProtocolState, ReceiverModel,
                              SiftedCounts, background_probability, click_probability,
                              error_probability, expected_counts)

NOISELESS = ReceiverModel({d: DetectorNoise(0.0, 0.0) for d in DETECTORS}, 0.42, 0.1, 0.003)


def test_background_table_values():
    h, v = presets.DETECTOR_NOISE["H"], presets.DETECTOR_NOISE["V"]
    assert background_probability(h, 0.0) == pytest.approx(7.6e-6, rel=1e-15)
    assert background_probability(v, 1.0) == pytest.approx(3.1e-5 + 1.8e-4, rel=1e-15)
    assert background_probability(DetectorNoise(0, 0), 0.7) == 0.0
    assert background_probability(DetectorNoise(0.5, 0.5), 1.0) == 1.0


def test_detector_noise_invariants():
    for y0, b in ((-1e-6, 0), (0, -1e-6), (0.7, 0.4)):
        with pytest.raises(ValueError):
            DetectorNoise(y0, b)


def test_click_trivial_cases(rx):
    assert click_probability(0.0, 0.3, NOISELESS, "H") == 0.0
    assert click_probability(0.56, 0.0, rx, "H") == pytest.approx(7.6e-6, rel=1e-12)
    assert error_probability(0.56, 0.3, ReceiverModel(NOISELESS.noise, 0.42, 0.1, 0.0), "H") == 0.0
    # vacuum: only the orthogonal detector background remains
    assert error_probability(0.0, 0.2, rx, "H") == pytest.approx(3.1e-5 + 1.8e-4 * 0.2, rel=1e-12)


def test_click_and_error_golden(rx):
    # [DERIVED] arbitrary-precision re-evaluation of the closed forms
    mp.mp.dps = 40
    eta, mu = mp.mpf("0.0275"), mp.mpf("0.56")
    sys_eff = eta * mp.mpf("0.42") * mp.mpf("0.1")
    pbg_h = mp.mpf("7.6e-6") + mp.mpf("2.6e-4") * eta
    pbg_v = mp.mpf("3.1e-5") + mp.mpf("1.8e-4") * eta
    click = 1 - (1 - pbg_h) * mp.exp(-sys_eff * mu)
    err = 1 - (1 - pbg_v) * mp.exp(-mp.mpf("0.003") * sys_eff * mu)
    assert click_probability(0.56, 0.0275, rx, "H") == pytest.approx(float(click), rel=1e-13)
    assert error_probability(0.56, 0.0275, rx, "H") == pytest.approx(float(err), rel=1e-12)


etas = st.floats(0.0, 1.0)
mus = st.floats(0.0, 2.0)


@settings(max_examples=80, deadline=None)
@given(etas, etas, mus, st.sampled_from(DETECTORS))
def test_click_monotone_and_bounded(a, b, mu, d):
    rx = presets.RECEIVER
    lo, hi = min(a, b), max(a, b)
    c_lo, c_hi = click_probability(mu, lo, rx, d), click_probability(mu, hi, rx, d)
    assert 0.0 <= c_lo <= 1.0 and 0.0 <= c_hi <= 1.0
    assert c_lo <= c_hi
    if hi > lo + 1e-6 and mu > 1e-3:
        assert c_hi > c_lo
    assert click_probability(mu + 0.1, hi, rx, d) >= c_hi


@settings(max_examples=80, deadline=None)
@given(etas, mus, st.sampled_from(DETECTORS))
def test_error_below_orthogonal_click(eta, mu, d):
    from turbkd.detection import ORTHOGONAL
    rx = presets.RECEIVER
    assert error_probability(mu, eta, rx, d) <= click_probability(mu, eta, rx, ORTHOGONAL[d]) + 1e-15


def test_expected_counts_oracle(rx, state15):
    # hand-assembled weights: N * P_k * q_A * q_B * mean over polarisations
    n, eta = 1e10, 0.035
    c = expected_counts(state15, rx, eta, n)
    for basis, dets, q in (("X", ("H", "V"), state15.q_x), ("Z", ("D", "A"), 1 - state15.q_x)):
        for k in range(3):
            mu, p = state15.mu[k], state15.p_mu[k]
            clicks = [click_probability(mu, eta, rx, d) for d in dets]
            errs = [error_probability(mu, eta, rx, d) for d in dets]
            w = n * p * q * 0.5
            n_exp = w * np.mean([a + b for a, b in zip(clicks, errs)])
            m_exp = w * np.mean(errs)
            got_n = c.n_x[k] if basis == "X" else c.n_z[k]
            got_m = c.m_x[k] if basis == "X" else c.m_z[k]
            assert got_n == pytest.approx(n_exp, rel=1e-12)
            assert got_m == pytest.approx(m_exp, rel=1e-12)


def test_expected_counts_trivial(rx, state15):
    z = expected_counts(state15, rx, 0.1, 0)
    assert all(np.all(a == 0) for a in (z.n_x, z.m_x, z.n_z, z.m_z))
    z = expected_counts(state15, NOISELESS, 0.0, 1e9)
    assert all(np.all(a == 0) for a in (z.n_x, z.m_x, z.n_z, z.m_z))


def test_counts_invariants_and_qber_trend(rx, state15):
    for eta in np.geomspace(1e-4, 1, 30):
        c = expected_counts(state15, rx, eta, 1e10)
        assert c.is_consistent()
    assert (expected_counts(state15, rx, 0.001, 1e10).qber_x
            > expected_counts(state15, rx, 0.1, 1e10).qber_x)


def test_protocol_state_invariants():
    ok = ProtocolState.from_free(0.8, 0.6, 0.3, 0.5, 0.2)
    assert ok.p_mu[2] == pytest.approx(0.1)
    assert not ok.violations()
    bad = [
        dict(q_x=1.2, p_mu=(0.6, 0.3, 0.1), mu=(0.5, 0.2, 0.002)),
        dict(q_x=0.8, p_mu=(0.6, 0.3, 0.2), mu=(0.5, 0.2, 0.002)),
        dict(q_x=0.8, p_mu=(0.6, 0.3, 0.1), mu=(0.2, 0.2, 0.002)),
        dict(q_x=0.8, p_mu=(0.6, 0.3, 0.1), mu=(0.5, 0.001, 0.002)),
    ]
    for kw in bad:
        with pytest.raises(ValueError):
            ProtocolState(**kw)


def test_sifted_counts_arithmetic():
    a = SiftedCounts([1, 2, 3], [0, 1, 1], [4, 5, 6], [1, 1, 1])
    b = a + a
    assert np.array_equal(b.n_x, [2, 4, 6])
    assert b.scaled(0.5).total_x == pytest.approx(a.total_x)
    assert a.qber_x == pytest.approx(2 / 6)
    assert not SiftedCounts([1, 1, 1], [2, 0, 0], [1, 1, 1], [0, 0, 0]).is_consistent()


def test_receiver_validation():
    with pytest.raises(ValueError):
        ReceiverModel({"H": DetectorNoise(0, 0)}, 0.4, 0.1, 0.0)
    with pytest.raises(ValueError):
        ReceiverModel(NOISELESS.noise, 1.4, 0.1, 0.0)
    assert presets.RECEIVER.efficiency == pytest.approx(0.042)
