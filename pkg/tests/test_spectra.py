import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memspec.qsys import GAMMA_C13, GAMMA_E
from memspec.spectra import (SpectrumError, TimeTrace, TrackingConfig, alias_frequency,
                             drift_correct, fit_peak, nuclear_shift_scatter, power_spectrum,
                             signed_alias, trace_from_text, trace_to_text, track_epr, unalias)


def _cosine(f, fs, n, decay=math.inf, amp=0.05):
    t = np.arange(n) / fs
    return TimeTrace(t, 0.5 + amp * np.exp(-t / decay) * np.cos(2 * math.pi * f * t))


def test_parseval():
    rng = np.random.default_rng(0)
    tr = TimeTrace(np.arange(301) / 1e3, rng.random(301))
    x = tr.p - tr.p.mean()
    for pad in (1, 3, 4):
        assert power_spectrum(tr, zero_pad=pad).power.sum() == pytest.approx(np.sum(x ** 2), rel=1e-9)


def test_alias_example():
    assert alias_frequency(6.626070e6, 3450.0) == pytest.approx(1380.0, abs=1e-3)
    assert signed_alias(2.568e6, 20e3) == pytest.approx(8000.0)


def test_unalias_recovers_tone():
    fb = alias_frequency(6.62611579e6, 3450.0)
    res = unalias(fb, 3450.0, 6.6261e6)
    assert res.frequency == pytest.approx(6.62611579e6, abs=1e-3)
    assert not res.ambiguous


def test_unalias_band_check():
    with pytest.raises(ValueError):
        unalias(100.0, 3450.0, 5e6, band=(6e6, 7e6))


@settings(max_examples=200, deadline=None)
@given(st.floats(1e5, 1e7), st.floats(1e3, 2e4), st.floats(-0.45, 0.45))
def test_alias_unalias_round_trip(f, fs, frac):
    fb = alias_frequency(f, fs)
    margin = min(2 * fb, fs - 2 * fb) / 2
    guess = f + frac * margin
    assert unalias(fb, fs, guess).frequency == pytest.approx(f, rel=1e-9, abs=1e-6)


def test_rectangular_record_width():
    spec = power_spectrum(_cosine(1000.0, 3450.0, 155), zero_pad=16)
    pf = fit_peak(spec, (800, 1200), "sinc_sq")
    assert pf.fwhh == pytest.approx(0.8859 / (155 / 3450.0), rel=0.03)


def test_decaying_cosine_lorentzian():
    T = 0.5e-3
    spec = power_spectrum(_cosine(6000.0, 20e3, 2000, decay=T))
    pf = fit_peak(spec, (3000, 9000), "lorentzian")
    assert pf.fwhh == pytest.approx(1 / (math.pi * T), rel=0.02)
    # the sampled, truncated decay is not an exact Lorentzian; mirror leakage pulls the centre slightly
    assert pf.center == pytest.approx(6000.0, abs=0.02 * pf.fwhh)


def test_two_peaks_sorted():
    fs, n = 3450.0, 155
    t = np.arange(n) / fs
    tr = TimeTrace(t, 0.5 + 0.02 * np.cos(2 * math.pi * 1130 * t) + 0.02 * np.cos(2 * math.pi * 1335 * t))
    a, b = fit_peak(power_spectrum(tr), (1030, 1430), "sinc_sq", n_peaks=2)
    assert a.center == pytest.approx(1130, abs=2) and b.center == pytest.approx(1335, abs=2)


def test_nonuniform_needs_resample():
    t = np.sort(np.random.default_rng(1).uniform(0, 1, 50))
    tr = TimeTrace(t, np.full(50, 0.5))
    with pytest.raises(SpectrumError):
        power_spectrum(tr)
    power_spectrum(tr, resample=True)


def test_trace_text_round_trip():
    tr = _cosine(10.0, 100.0, 20)
    tr.tags = [(0, 20, 1e-6)]
    back = trace_from_text(trace_to_text(tr))
    assert np.allclose(back.t, tr.t, rtol=0, atol=1e-15) and np.allclose(back.p, tr.p, rtol=0, atol=1e-12)
    assert back.tags[0][2] == pytest.approx(1e-6)


def test_tracker_zero_drift():
    m = track_epr(np.arange(10.0), np.zeros(10))
    assert np.allclose(m.delta_b, 0.0, atol=1e-15) and not m.tracking_lost


def test_tracker_linear_ramp():
    db = np.linspace(0, 1e-5, 20)  # 280 kHz total on the electron
    m = track_epr(np.arange(20.0), db)
    assert np.allclose(m.delta_b, db, atol=1e-10)


def test_tracker_loses_lock_on_jump():
    db = np.array([0.0, 0.0, 1e-3])  # 28 MHz jump
    assert track_epr(np.arange(3.0), db).tracking_lost


def test_tracking_noise_maps_to_nuclear_scatter():
    db = np.zeros(400)
    m = track_epr(np.arange(400.0), db, TrackingConfig().with_frequency_noise(33e3), rng=3)
    assert nuclear_shift_scatter(m, db) == pytest.approx(33e3 * GAMMA_C13 / GAMMA_E, rel=0.12)


def test_demodulation_undoes_known_shift():
    fs, n, f0 = 20e3, 280, 2.568e6
    t = np.arange(n) / fs
    sets = []
    for shift in (0.0, 900.0, -1300.0):
        p = 0.5 + 0.05 * np.exp(-t / 1.4e-3) * np.cos(2 * math.pi * (f0 + shift) * t)
        sets.append(TimeTrace(t, p, tags=[(0, n, 2 * math.pi * shift / GAMMA_C13)]))
    ref = drift_correct(sets[:1], method="none")
    # only the signed-alias image is corrected; its mirror moves the other way and can wrap
    pos = np.abs(ref.frequencies - signed_alias(f0, fs)) < 2000.0
    for method in ("demodulate", "shift"):
        cor = drift_correct(sets, method=method)
        peak = ref.power[pos].max()
        assert cor.frequencies[np.argmax(cor.power)] == pytest.approx(signed_alias(f0, fs))
        assert cor.power[pos].max() == pytest.approx(peak, rel=0.01)
        assert np.abs(cor.power[pos] - ref.power[pos]).max() < 0.1 * peak
