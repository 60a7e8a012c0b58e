import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memspec.readout import (DegenerateReadoutError, ReadoutParams, ShotRecord, distinguishability,
                             estimate_probability, fisher_information, repetitive_readout,
                             simulate_counts)


def test_memory_contrast_after_three_time_constants():
    params = ReadoutParams(n_repeats=3601, repolarization_constant=1.2e-3, readout_period=1e-6)
    assert distinguishability(params)[3600] == pytest.approx(math.exp(-3.0), rel=1e-6)


def test_occupancy_decays_toward_pumped_state():
    params = ReadoutParams(n_repeats=2000, repolarization_constant=0.5e-3, readout_period=1e-6)
    _, states = simulate_counts(1.0, params, 3000, rng=1, return_states=True)
    occ = states.mean(axis=0)
    assert occ[500] == pytest.approx(math.exp(-1.0), abs=0.03)


@pytest.mark.parametrize("p", [0.1, 0.5, 0.85])
def test_estimator_unbiased(p):
    params = ReadoutParams(n_repeats=300, photons_bright=0.05, photons_dark=0.02)
    counts = simulate_counts(p, params, 4000, rng=11)
    est = estimate_probability(counts, params)
    assert abs(est.p_hat - p) < 4 * est.stderr


def test_relabel_invariance():
    params = ReadoutParams(n_repeats=200)
    counts = simulate_counts(0.3, params, 500, rng=2)
    a = estimate_probability(counts, params)
    b = estimate_probability(counts, params.swapped())
    assert a.p_hat + b.p_hat == pytest.approx(1.0, abs=1e-6)


def test_degenerate_yields_rejected():
    params = ReadoutParams(photons_bright=0.02, photons_dark=0.02)
    with pytest.raises(DegenerateReadoutError):
        estimate_probability(np.zeros((3, params.n_repeats), dtype=int), params)


def test_fisher_exact_single_repeat():
    params = ReadoutParams(n_repeats=1, repolarization_constant=math.inf, readout_period=0.0)
    # one Poisson draw: closed-form sum over counts
    from scipy import stats
    c = np.arange(40)
    pb, pd = stats.poisson.pmf(c, 0.03), stats.poisson.pmf(c, 0.02)
    expected = np.sum((pb - pd) ** 2 / (0.5 * pb + 0.5 * pd))
    assert fisher_information(0.5, params) == pytest.approx(expected, rel=1e-10)


def test_fisher_information_grows_with_repeats():
    infos = [fisher_information(0.5, ReadoutParams(n_repeats=n), n_mc=3000, rng=5) for n in (10, 100, 1000)]
    assert infos[0] < infos[1] < infos[2]


def test_shot_record_round_trip():
    rec = repetitive_readout(1.0, ReadoutParams(n_repeats=50), rng=4)
    back = ShotRecord.from_text(rec.to_text())
    assert np.array_equal(back.counts, rec.counts)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(1, 40))
def test_estimate_in_unit_interval(p, n):
    params = ReadoutParams(n_repeats=n, photons_bright=0.3, photons_dark=0.05)
    est = estimate_probability(simulate_counts(p, params, 50, rng=0), params)
    assert 0.0 <= est.p_hat <= 1.0
