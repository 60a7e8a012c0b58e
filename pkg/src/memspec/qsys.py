"""Small-dimension spin dynamics for an NV electron coupled to one nuclear spin.

The state space is the product of a truncated electron spin (m_S = 0 and
m_S = -1 by default, optionally m_S = +1) and a spin-1/2 nucleus. States are
plain complex numpy arrays of shape ``(..., d, d)``; every operation accepts a
leading batch dimension so that phase averages and Monte Carlo ensembles run
as single vectorised calls.

Basis ordering
--------------
``index = electron_index * n_nuclear + nuclear_index``

electron index 0 is ``|0_e>`` (m_S = 0), index 1 is ``|1_e>`` (m_S = -1),
index 2 (optional) is m_S = +1. Nuclear index 0 is ``|0_n>`` (m_I = -1/2),
index 1 is ``|1_n>`` (m_I = +1/2).

Units
-----
Hamiltonians are angular frequencies (rad/s), times are seconds, fields Tesla.
Reported transition frequencies are in Hz.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

TWO_PI = 2.0 * math.pi

# CODATA electron value; rounds to the commonly quoted 28 GHz/T.
GAMMA_E = TWO_PI * 28.0249514e9
GAMMA_C13 = TWO_PI * 10.7e6
GAMMA_N15 = -TWO_PI * 4.316e6
ZERO_FIELD_SPLITTING = TWO_PI * 2.870e9

TRANSITIONS = ("mw1", "mw2", "rf1", "rf2")


class DegenerateLevelsError(ValueError):
    pass


@dataclass(frozen=True)
class SpinBasis:
    electron_levels: tuple = (0, -1)
    nuclear_levels: tuple = (-0.5, 0.5)

    def __post_init__(self):
        if tuple(self.electron_levels[:2]) != (0, -1):
            raise ValueError("electron levels must start with (0, -1)")
        if len(self.electron_levels) not in (2, 3):
            raise ValueError("two or three electron levels supported")
        if len(self.electron_levels) == 3 and self.electron_levels[2] != 1:
            raise ValueError("third electron level must be m_S=+1")
        if sorted(self.nuclear_levels) != [-0.5, 0.5]:
            raise ValueError("nuclear levels must be the two m_I=+-1/2 states")

    @property
    def n_electron(self) -> int:
        return len(self.electron_levels)

    @property
    def n_nuclear(self) -> int:
        return len(self.nuclear_levels)

    @property
    def dimension(self) -> int:
        return self.n_electron * self.n_nuclear

    def index(self, electron: int, nuclear: int) -> int:
        return electron * self.n_nuclear + nuclear


@dataclass(frozen=True)
class HyperfineParams:
    """Secular hyperfine coupling in rad/s."""

    a_parallel: float
    a_perp: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.a_parallel) and math.isfinite(self.a_perp)):
            raise ValueError("hyperfine couplings must be finite")
        if self.a_perp < 0:
            raise ValueError("a_perp must be >= 0")


@dataclass(frozen=True)
class FieldConfig:
    B0: float
    gamma_n: float = GAMMA_N15
    gamma_e: float = GAMMA_E
    zero_field_splitting: float = ZERO_FIELD_SPLITTING

    def __post_init__(self):
        if not self.B0 > 0:
            raise ValueError(f"B0 must be positive, got {self.B0!r}")


@dataclass(frozen=True)
class RelaxationParams:
    """Relaxation times in seconds; ``math.inf`` disables a channel.

    ``T2_nuclear=None`` slaves the nuclear coherence time to the electron T1.
    """

    T1_electron: float = math.inf
    T2_electron: float = math.inf
    T1_nuclear_dark: float = math.inf
    T1_nuclear_readout: float = math.inf
    T2_nuclear: float | None = math.inf

    def __post_init__(self):
        for name in ("T1_electron", "T2_electron", "T1_nuclear_dark", "T1_nuclear_readout"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.T2_nuclear is not None and not self.T2_nuclear > 0:
            raise ValueError("T2_nuclear must be > 0")
        if self.T2_electron > 2 * self.T1_electron:
            raise ValueError("T2_electron must not exceed 2*T1_electron")
        if self.t2_nuclear > 2 * self.T1_nuclear_dark:
            raise ValueError("T2_nuclear must not exceed 2*T1_nuclear_dark")

    @property
    def t2_nuclear(self) -> float:
        return self.T1_electron if self.T2_nuclear is None else self.T2_nuclear


REFERENCE_FIELD = FieldConfig(B0=0.32002)
N15_HYPERFINE = HyperfineParams(a_parallel=TWO_PI * 3.05e6)
C13_HYPERFINE = HyperfineParams(a_parallel=-TWO_PI * 138.9e3, a_perp=TWO_PI * 120.55e3)


# -- operators ---------------------------------------------------------------

def _electron_sz(basis: SpinBasis) -> np.ndarray:
    return np.diag(np.array(basis.electron_levels, dtype=float))


def _nuclear_ops(basis: SpinBasis):
    mi = np.array(basis.nuclear_levels, dtype=float)
    iz = np.diag(mi)
    ix = np.zeros((2, 2))
    # <m|Ix|m'> = 1/2 for m != m'
    ix[0, 1] = ix[1, 0] = 0.5
    return iz, ix


def build_hamiltonian(field: FieldConfig, hf: HyperfineParams, basis: SpinBasis = SpinBasis(),
                      frame: str = "lab") -> np.ndarray:
    """Secular NV Hamiltonian (rad/s) on ``basis``.

    ``D Sz^2 + gamma_e B Sz - gamma_n B Iz + a_par Sz Iz + a_perp Sz Ix``

    With ``frame="rotating"`` the zero-field splitting and the electron Zeeman
    term are removed, i.e. the frame rotates with the bare electron
    transition; nuclear and hyperfine terms are kept.
    """
    if not isinstance(field, FieldConfig):
        raise TypeError("field must be a FieldConfig")
    if field.B0 <= 0:
        raise ValueError("B0 must be positive")
    if frame not in ("lab", "rotating"):
        raise ValueError(f"unknown frame {frame!r}")
    sz = _electron_sz(basis)
    iz, ix = _nuclear_ops(basis)
    ie = np.eye(basis.n_electron)
    inuc = np.eye(basis.n_nuclear)
    h = -field.gamma_n * field.B0 * np.kron(ie, iz)
    h = h + hf.a_parallel * np.kron(sz, iz) + hf.a_perp * np.kron(sz, ix)
    if frame == "lab":
        h = h + np.kron(field.zero_field_splitting * sz @ sz + field.gamma_e * field.B0 * sz, inuc)
    return h.astype(complex)


@dataclass
class TransitionFrequencies:
    mw1: float
    mw2: float
    rf1: float
    rf2: float
    degenerate: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in TRANSITIONS}


def _level_energies(h: np.ndarray, basis: SpinBasis) -> np.ndarray:
    """Eigen-energies assigned to product basis labels by maximum overlap."""
    evals, evecs = np.linalg.eigh(h)
    overlap = np.abs(evecs) ** 2  # [basis state, eigenvector]
    rows, cols = linear_sum_assignment(-overlap)
    energies = np.empty(len(evals))
    energies[rows] = evals[cols]
    return energies


def transition_frequencies(h: np.ndarray, basis: SpinBasis = SpinBasis(),
                           degeneracy_tol: float = 1e-6) -> TransitionFrequencies:
    """The four allowed spin-flip frequencies (Hz) of the {0,-1} x {0_n,1_n} block.

    mw1: electron flip with the nucleus in ``|0_n>``; mw2: nucleus in ``|1_n>``;
    rf1: nuclear flip with the electron in ``|0_e>``; rf2: electron in ``|1_e>``.
    Coinciding frequencies are listed in ``degenerate`` as label pairs.
    """
    h = np.asarray(h)
    if not np.allclose(h, h.conj().T, atol=1e-9 * max(1.0, np.abs(h).max())):
        raise ValueError("Hamiltonian is not Hermitian")
    e = _level_energies(h, basis)
    ix = basis.index
    freqs = {
        "mw1": abs(e[ix(1, 0)] - e[ix(0, 0)]),
        "mw2": abs(e[ix(1, 1)] - e[ix(0, 1)]),
        "rf1": abs(e[ix(0, 1)] - e[ix(0, 0)]),
        "rf2": abs(e[ix(1, 1)] - e[ix(1, 0)]),
    }
    freqs = {k: v / TWO_PI for k, v in freqs.items()}
    scale = max(freqs.values()) or 1.0
    degenerate = []
    for a, b in (("mw1", "mw2"), ("rf1", "rf2")):
        if abs(freqs[a] - freqs[b]) <= degeneracy_tol * scale:
            degenerate.append((a, b))
    return TransitionFrequencies(**freqs, degenerate=degenerate)


def conditional_nuclear_hamiltonians(field: FieldConfig, hf: HyperfineParams,
                                     basis: SpinBasis = SpinBasis()) -> list:
    """2x2 nuclear Hamiltonians, one per electron level (block diagonal form)."""
    h = build_hamiltonian(field, hf, basis, frame="rotating")
    n = basis.n_nuclear
    return [h[i * n:(i + 1) * n, i * n:(i + 1) * n].copy() for i in range(basis.n_electron)]


# -- states -------------------------------------------------------------------

def basis_state(electron: int, nuclear: int, basis: SpinBasis = SpinBasis()) -> np.ndarray:
    rho = np.zeros((basis.dimension, basis.dimension), dtype=complex)
    i = basis.index(electron, nuclear)
    rho[i, i] = 1.0
    return rho


def product_state(rho_e: np.ndarray, rho_n: np.ndarray) -> np.ndarray:
    return np.kron(np.asarray(rho_e, dtype=complex), np.asarray(rho_n, dtype=complex))


def ket_to_dm(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.einsum("...i,...j->...ij", psi, psi.conj())


def check_density_matrix(rho: np.ndarray, herm_tol: float = 1e-12, trace_tol: float = 1e-12,
                         eig_tol: float = 1e-10) -> None:
    """Raise ``ValueError`` unless every matrix in ``rho`` is a valid state."""
    rho = np.asarray(rho)
    herm = np.abs(rho - np.swapaxes(rho.conj(), -1, -2)).max()
    if herm > herm_tol:
        raise ValueError(f"not Hermitian (deviation {herm:.2e})")
    tr = np.abs(np.trace(rho, axis1=-2, axis2=-1) - 1.0).max()
    if tr > trace_tol:
        raise ValueError(f"trace deviates from 1 by {tr:.2e}")
    hermitised = 0.5 * (rho + np.swapaxes(rho.conj(), -1, -2))
    mineig = np.linalg.eigvalsh(hermitised).min()
    if mineig < -eig_tol:
        raise ValueError(f"negative eigenvalue {mineig:.2e}")


def electron_populations(rho: np.ndarray, basis: SpinBasis = SpinBasis()) -> np.ndarray:
    d = np.real(np.diagonal(rho, axis1=-2, axis2=-1))
    return d.reshape(d.shape[:-1] + (basis.n_electron, basis.n_nuclear)).sum(axis=-1)


def nuclear_populations(rho: np.ndarray, basis: SpinBasis = SpinBasis()) -> np.ndarray:
    d = np.real(np.diagonal(rho, axis1=-2, axis2=-1))
    return d.reshape(d.shape[:-1] + (basis.n_electron, basis.n_nuclear)).sum(axis=-2)


def partial_trace_nuclear(rho: np.ndarray, basis: SpinBasis = SpinBasis()) -> np.ndarray:
    ne, nn = basis.n_electron, basis.n_nuclear
    r = rho.reshape(rho.shape[:-2] + (ne, nn, ne, nn))
    return np.einsum("...anbn->...ab", r)


def purity(rho: np.ndarray) -> np.ndarray:
    return np.real(np.einsum("...ij,...ji->...", rho, rho))


def _apply(u: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return u @ rho @ np.swapaxes(u.conj(), -1, -2)


# -- gates --------------------------------------------------------------------

def _transition_pairs(transition: str, basis: SpinBasis) -> list:
    ix = basis.index
    pairs = {
        "mw1": [(ix(0, 0), ix(1, 0))],
        "mw2": [(ix(0, 1), ix(1, 1))],
        "rf1": [(ix(0, 0), ix(0, 1))],
        "rf2": [(ix(1, 0), ix(1, 1))],
        # non-selective (hard) pulses drive both hyperfine lines at once
        "e": [(ix(0, 0), ix(1, 0)), (ix(0, 1), ix(1, 1))],
        "n": [(ix(0, 0), ix(0, 1)), (ix(1, 0), ix(1, 1))],
    }
    try:
        return pairs[transition]
    except KeyError:
        raise ValueError(f"unknown transition {transition!r}") from None


def rotation_unitary(transition: str, angle: float, axis_phase: float = 0.0,
                     basis: SpinBasis = SpinBasis()) -> np.ndarray:
    """exp(-i angle/2 (cos(phase) X + sin(phase) Y)) on the addressed pair(s)."""
    u = np.eye(basis.dimension, dtype=complex)
    c = math.cos(angle / 2)
    s = math.sin(angle / 2)
    off = -1j * s * np.exp(-1j * axis_phase)
    for a, b in _transition_pairs(transition, basis):
        u[a, a] = c
        u[b, b] = c
        u[a, b] = off
        u[b, a] = -1j * s * np.exp(1j * axis_phase)
    return u


def selective_rotation(rho: np.ndarray, transition: str, angle: float, axis_phase: float = 0.0,
                       efficiency: float = 1.0, basis: SpinBasis = SpinBasis()) -> np.ndarray:
    """Rotate the addressed two-level subspace; identity elsewhere.

    An efficiency below one is a convex mixture of the rotated and the
    untouched state.
    """
    if not 0.0 <= efficiency <= 1.0:
        raise ValueError(f"efficiency must be in [0, 1], got {efficiency}")
    u = rotation_unitary(transition, angle, axis_phase, basis)
    rotated = _apply(u, rho)
    if efficiency == 1.0:
        return rotated
    return efficiency * rotated + (1.0 - efficiency) * rho


def phase_gate(rho: np.ndarray, phi, basis: SpinBasis = SpinBasis()) -> np.ndarray:
    """Relative phase exp(i phi) on the ``|1_e>`` manifold.

    ``phi`` may be an array broadcasting against the batch dimensions of rho.
    """
    phi = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi)):
        raise ValueError("phase must be finite")
    levels = np.zeros(basis.n_electron)
    levels[1] = 1.0
    diag_e = np.repeat(levels, basis.n_nuclear)
    ph = np.exp(1j * phi[..., None] * diag_e)  # (..., d)
    return ph[..., :, None] * rho * ph[..., None, :].conj()


# -- open-system evolution ----------------------------------------------------

def _lift_electron(op2: np.ndarray, basis: SpinBasis) -> np.ndarray:
    full = np.zeros((basis.n_electron, basis.n_electron), dtype=complex)
    full[:2, :2] = op2
    return np.kron(full, np.eye(basis.n_nuclear))


def _lift_nuclear(op2: np.ndarray, basis: SpinBasis) -> np.ndarray:
    return np.kron(np.eye(basis.n_electron), op2)


_SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)
_SIGMA_MINUS = _SIGMA_PLUS.T.copy()
_SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)


def _pair_channels(t1: float, t2: float) -> list:
    """(operator, rate) pairs for symmetric flips plus pure dephasing.

    Flips at 1/(2 T1) each way relax populations with T1 toward the
    maximally mixed state; extra dephasing makes coherences decay with T2.
    """
    out = []
    if math.isfinite(t1):
        k = 1.0 / (2.0 * t1)
        out += [(_SIGMA_PLUS, k), (_SIGMA_MINUS, k)]
    flip_dephasing = 0.0 if not math.isfinite(t1) else 1.0 / (2.0 * t1)
    if math.isfinite(t2):
        gamma_phi = 1.0 / t2 - flip_dephasing
        if gamma_phi > 0:
            out.append((_SIGMA_Z, gamma_phi / 2.0))
    return out


def collapse_operators(relax: RelaxationParams, basis: SpinBasis = SpinBasis(),
                       nuclear_t1: float | None = None) -> list:
    t1n = relax.T1_nuclear_dark if nuclear_t1 is None else nuclear_t1
    ops = []
    for op, rate in _pair_channels(relax.T1_electron, relax.T2_electron):
        ops.append(math.sqrt(rate) * _lift_electron(op, basis))
    t2n = min(relax.t2_nuclear, 2 * t1n)
    for op, rate in _pair_channels(t1n, t2n):
        ops.append(math.sqrt(rate) * _lift_nuclear(op, basis))
    return ops


def liouvillian(h: np.ndarray, c_ops: list) -> np.ndarray:
    """Superoperator acting on row-major vectorised density matrices."""
    d = h.shape[0]
    eye = np.eye(d)
    lv = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for c in c_ops:
        cdc = c.conj().T @ c
        lv += np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T)
    return lv


@lru_cache(maxsize=256)
def _propagator_cached(key_h: bytes, shape: tuple, relax: RelaxationParams, basis: SpinBasis,
                       nuclear_t1, duration: float) -> np.ndarray:
    h = np.frombuffer(key_h, dtype=complex).reshape(shape)
    lv = liouvillian(h, collapse_operators(relax, basis, nuclear_t1))
    return scipy.linalg.expm(lv * duration)


def free_evolution(rho: np.ndarray, duration: float, h: np.ndarray | None = None,
                   relax: RelaxationParams = RelaxationParams(), basis: SpinBasis = SpinBasis(),
                   nuclear_t1: float | None = None) -> np.ndarray:
    """Evolve under ``h`` together with electron and nuclear relaxation.

    ``nuclear_t1`` overrides the dark nuclear T1 (used while the laser is on).
    """
    if duration < 0:
        raise ValueError("duration must be >= 0")
    if duration == 0:
        return np.array(rho, copy=True)
    d = basis.dimension
    if h is None:
        h = np.zeros((d, d), dtype=complex)
    h = np.ascontiguousarray(h, dtype=complex)
    prop = _propagator_cached(h.tobytes(), h.shape, relax, basis, nuclear_t1, float(duration))
    rho = np.asarray(rho, dtype=complex)
    vec = rho.reshape(rho.shape[:-2] + (d * d,))
    out = vec @ prop.T
    return out.reshape(rho.shape)


def unitary_propagator(h: np.ndarray, duration) -> np.ndarray:
    """exp(-i h t) for scalar or array ``duration`` (leading batch axes)."""
    evals, evecs = np.linalg.eigh(h)
    t = np.asarray(duration, dtype=float)
    phases = np.exp(-1j * t[..., None] * evals)
    return (evecs * phases[..., None, :]) @ evecs.conj().T


def electron_flip_operator(basis: SpinBasis = SpinBasis()) -> np.ndarray:
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    full = np.eye(basis.n_electron, dtype=complex)
    full[:2, :2] = sx
    return np.kron(full, np.eye(basis.n_nuclear))


def sample_flip_times(duration: float, flip_rate: float, rng) -> np.ndarray:
    """Event times of a homogeneous Poisson process on [0, duration)."""
    if flip_rate < 0:
        raise ValueError("flip_rate must be >= 0")
    rng = np.random.default_rng(rng)
    if flip_rate == 0 or duration <= 0:
        return np.empty(0)
    n = rng.poisson(flip_rate * duration)
    return np.sort(rng.uniform(0.0, duration, size=n))


@dataclass
class TrajectorySample:
    rho: np.ndarray
    flip_times: np.ndarray


def stochastic_flip_trajectory(rho: np.ndarray, duration: float, h: np.ndarray | None,
                               flip_rate: float, rng=None, basis: SpinBasis = SpinBasis(),
                               flip_times: np.ndarray | None = None) -> TrajectorySample:
    """One piecewise-deterministic trajectory with random electron flips.

    Flips (0 <-> -1) arrive as a Poisson process with rate ``flip_rate``; the
    ensemble then relaxes the electron polarization as exp(-2 flip_rate t),
    i.e. it reproduces ``free_evolution`` with T1 = 1 / (2 flip_rate).
    """
    if duration < 0:
        raise ValueError("duration must be >= 0")
    d = basis.dimension
    if h is None:
        h = np.zeros((d, d), dtype=complex)
    if flip_times is None:
        flip_times = sample_flip_times(duration, flip_rate, rng)
    flip = electron_flip_operator(basis)
    state = np.asarray(rho, dtype=complex)
    last = 0.0
    for tf in flip_times:
        state = _apply(unitary_propagator(h, tf - last), state)
        state = _apply(flip, state)
        last = tf
    state = _apply(unitary_propagator(h, duration - last), state)
    return TrajectorySample(rho=state, flip_times=np.asarray(flip_times))


def laser_reinitialize(rho: np.ndarray, fidelity: float = 1.0, basis: SpinBasis = SpinBasis()) -> np.ndarray:
    """Reset the electron to ``|0_e>`` (with probability ``fidelity``), keeping the nuclear state."""
    ne, nn = basis.n_electron, basis.n_nuclear
    rho = np.asarray(rho)
    r = rho.reshape(rho.shape[:-2] + (ne, nn, ne, nn))
    rho_n = np.einsum("...anam->...nm", r)
    e0 = np.zeros((basis.n_electron, basis.n_electron), dtype=complex)
    e0[0, 0] = 1.0
    reset = np.einsum("ab,...nm->...anbm", e0, rho_n).reshape(rho.shape)
    if fidelity == 1.0:
        return reset
    return fidelity * reset + (1 - fidelity) * rho


def dephase_electron(rho: np.ndarray, basis: SpinBasis = SpinBasis()) -> np.ndarray:
    """Discard electron coherences (keep electron-diagonal blocks)."""
    ne, nn = basis.n_electron, basis.n_nuclear
    r = np.asarray(rho).reshape(rho.shape[:-2] + (ne, nn, ne, nn))
    mask = np.eye(ne)[:, None, :, None]
    return (r * mask).reshape(rho.shape)


def dephase_full(rho: np.ndarray) -> np.ndarray:
    """Keep only the diagonal in the product basis."""
    d = rho.shape[-1]
    return rho * np.eye(d)
