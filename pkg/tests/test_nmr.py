import math

import numpy as np
import pytest

from memspec.nmr import Decoupling, NmrScenario, nmr_point, run_nmr_correlation
from memspec.qsys import HyperfineParams
from memspec.signals import CarbonSpin
from memspec.spectra import alias_frequency, power_spectrum

FS = 5610.0
WEAK_MIXING = CarbonSpin(HyperfineParams(-2 * math.pi * 138.9e3, 2 * math.pi * 5e3))


def test_no_flips_gives_cosine_at_conditional_frequency():
    scn = NmrScenario(carbon=WEAK_MIXING, electron_T1=math.inf)
    f_zero, _ = scn.conditional_frequencies()
    t = 5e-6 + np.arange(200) / FS
    tr = run_nmr_correlation(scn, scn.sensing_params(), t, 2, 0)
    spec = power_spectrum(tr, zero_pad=1)
    peak = spec.frequencies[np.argmax(spec.power)]
    assert abs(peak - alias_frequency(f_zero, FS)) <= FS / t.size


def test_no_flips_is_deterministic():
    scn = NmrScenario(electron_T1=math.inf)
    xy8 = scn.sensing_params()
    _, err = nmr_point(scn, xy8, 3e-3, 16, 0)
    assert err == 0.0


def test_repump_is_inert_without_flips():
    base = NmrScenario(electron_T1=math.inf)
    rep = NmrScenario(electron_T1=math.inf, decouple=Decoupling("repump", period=0.5e-3, duration=1e-6))
    xy8 = base.sensing_params()
    for t in (0.3e-3, 2.2e-3):
        assert nmr_point(rep, xy8, t, 4, 1)[0] == pytest.approx(nmr_point(base, xy8, t, 4, 1)[0], abs=1e-12)


def test_stderr_shrinks_as_root_m():
    scn = NmrScenario()
    xy8 = scn.sensing_params()
    errs = [np.mean([nmr_point(scn, xy8, 1.1e-3, m, s)[1] for s in range(6)]) for m in (400, 1600)]
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.15)


def test_balanced_spacing_odd_and_even():
    n, s = Decoupling("pi_train", frequency=100e3).pulse_spacing(1e-3)
    assert n % 2 == 1 and s == pytest.approx(1e-3 / (n + 1))
    assert abs((n + 1) - 100) <= 1


def test_pulse_spacing_below_dead_time_rejected():
    with pytest.raises(ValueError):
        Decoupling("pi_train", frequency=50e6).pulse_spacing(1e-3)


def test_trace_independent_of_workers():
    scn = NmrScenario()
    t = 5e-6 + np.arange(6) / FS
    a = run_nmr_correlation(scn, scn.sensing_params(), t, 50, 9, workers=1)
    b = run_nmr_correlation(scn, scn.sensing_params(), t, 50, 9, workers=2)
    assert np.array_equal(a.p, b.p) and np.array_equal(a.stderr, b.stderr)
