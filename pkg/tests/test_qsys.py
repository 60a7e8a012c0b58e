import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memspec import qsys
from memspec.qsys import (C13_HYPERFINE, GAMMA_C13, N15_HYPERFINE, REFERENCE_FIELD, FieldConfig,
                          RelaxationParams, basis_state, build_hamiltonian, check_density_matrix,
                          electron_populations, free_evolution, nuclear_populations,
                          selective_rotation, transition_frequencies)


def test_n15_levels_at_reference_field():
    tf = transition_frequencies(build_hamiltonian(REFERENCE_FIELD, N15_HYPERFINE))
    assert round(tf.mw1 / 1e6) == 6097 and round(tf.mw2 / 1e6) == 6100
    assert abs(tf.mw2 - tf.mw1 - 3.05e6) < 1e3
    assert abs(tf.rf1 - 1.381e6) < 1e3 and abs(tf.rf2 - 1.669e6) < 1e3


def test_c13_conditional_frequencies_at_240_mT():
    tf = transition_frequencies(build_hamiltonian(FieldConfig(0.24, GAMMA_C13), C13_HYPERFINE))
    assert tf.rf1 == pytest.approx(2.568e6, abs=1e3)
    assert tf.rf2 == pytest.approx(2.4321e6, abs=1e3)


def test_rotating_frame_keeps_nuclear_lines():
    lab = transition_frequencies(build_hamiltonian(REFERENCE_FIELD, N15_HYPERFINE))
    rot = transition_frequencies(build_hamiltonian(REFERENCE_FIELD, N15_HYPERFINE, frame="rotating"))
    assert rot.rf1 == pytest.approx(lab.rf1, rel=1e-12)
    assert rot.rf2 == pytest.approx(lab.rf2, rel=1e-12)


def test_pi_pulse_flips_only_addressed_pair():
    rho = selective_rotation(basis_state(0, 0), "mw1", math.pi)
    assert electron_populations(rho)[1] == pytest.approx(1.0)
    # mw1 is conditioned on |0_n>; with the nucleus in |1_n> nothing happens
    rho = selective_rotation(basis_state(0, 1), "mw1", math.pi)
    assert electron_populations(rho)[0] == pytest.approx(1.0)


def test_store_maps_electron_zero_to_nuclear_one():
    rho = selective_rotation(basis_state(0, 0), "rf1", math.pi)
    rho = selective_rotation(rho, "mw1", math.pi)
    assert nuclear_populations(rho)[1] == pytest.approx(1.0)
    assert electron_populations(rho)[0] == pytest.approx(1.0)


def test_electron_t1_decay_of_population_difference():
    relax = RelaxationParams(T1_electron=1e-3, T2_electron=2e-3)
    rho = free_evolution(basis_state(0, 0), 1e-3, relax=relax)
    pe = electron_populations(rho)
    assert pe[0] - pe[1] == pytest.approx(math.exp(-1.0), rel=1e-9)


def test_relaxation_parameter_checks():
    with pytest.raises(ValueError):
        RelaxationParams(T1_electron=1e-3, T2_electron=3e-3)
    with pytest.raises(ValueError):
        RelaxationParams(T1_electron=0.0)


def test_flip_trajectory_ensemble_matches_t1():
    rng = np.random.default_rng(3)
    rate, t = 500.0, 1e-3
    pops = [electron_populations(qsys.stochastic_flip_trajectory(basis_state(0, 0), t, None, rate, rng).rho)[0]
            for _ in range(4000)]
    expected = 0.5 * (1 + math.exp(-2 * rate * t))
    assert np.mean(pops) == pytest.approx(expected, abs=0.02)


angles = st.floats(0, 2 * math.pi, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(qsys.TRANSITIONS), angles, angles), min_size=1, max_size=12))
def test_rotations_preserve_state_validity(ops):
    rho = basis_state(0, 0)
    for tr, a, ph in ops:
        rho = selective_rotation(rho, tr, a, ph)
    check_density_matrix(rho)
    assert qsys.purity(rho) == pytest.approx(1.0, abs=1e-10)
