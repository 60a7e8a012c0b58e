import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memspec.signals import (AcSignal, SensingWindow, Tone, accumulated_phase, analytic_p,
                             general_correlation, p0_weak, phase_nodes)

F = 6.62607e6
WINDOW = SensingWindow(0.0, 8, 1 / (2 * F))


def test_phase_nodes_integrate_trig_exactly():
    x, w = phase_nodes(64)
    assert np.sum(w) == pytest.approx(1.0)
    assert np.sum(w * np.sin(x) ** 2) == pytest.approx(0.5, abs=1e-12)


def test_weak_signal_limit_matches_closed_form():
    sig = AcSignal.single(0.2e-6, F)
    t = np.linspace(1e-6, 2e-3, 50)
    exact = general_correlation(sig, WINDOW, t)
    assert np.abs(exact - analytic_p(sig, WINDOW, t)).max() < 5e-3 * p0_weak(0.2e-6, WINDOW.t_meas)


def test_first_harmonic_close_to_exact_on_resonance():
    sig = AcSignal.single(3e-6, F, phase=0.3)
    a = accumulated_phase(sig, WINDOW, "exact")
    b = accumulated_phase(sig, WINDOW, "first_harmonic")
    assert b == pytest.approx(a, rel=0.25)


def test_off_resonant_tone_filtered():
    on = AcSignal.single(3e-6, F, phase=0.0)
    off = AcSignal.single(3e-6, 3 * F + 1.7e6, phase=0.0)
    assert abs(accumulated_phase(off, WINDOW)) < 0.25 * abs(accumulated_phase(on, WINDOW))


def test_negative_amplitude_rejected():
    with pytest.raises(ValueError):
        Tone(-1.0, F)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 20e-6), st.floats(0, 5e-3))
def test_correlation_probability_bounded(v0, t):
    p = general_correlation(AcSignal.single(v0, F), WINDOW, t, n_nodes=32)
    assert 0.0 <= p <= 1.0
