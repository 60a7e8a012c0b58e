"""AC test signals, XY8 phase accumulation and closed-form correlation oracles."""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .qsys import GAMMA_E, GAMMA_C13, HyperfineParams, C13_HYPERFINE

TWO_PI = 2.0 * math.pi
DEFAULT_PHASE_NODES = 256


@dataclass(frozen=True)
class Tone:
    amplitude: float  # Tesla
    frequency: float  # Hz
    phase: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")


@dataclass(frozen=True)
class AcSignal:
    """Sum of independent tones ``V0 cos(2 pi f t + phi)``.

    With ``phase_policy="uniform_random"`` every tone carries an independent
    phase uniformly distributed over [0, 2 pi) (an unsynchronised generator);
    ``"fixed"`` uses the phases stored on the tones.
    """

    tones: tuple = ()
    phase_policy: str = "uniform_random"

    def __post_init__(self):
        if self.phase_policy not in ("uniform_random", "fixed"):
            raise ValueError(f"unknown phase policy {self.phase_policy!r}")
        object.__setattr__(self, "tones", tuple(self.tones))

    @classmethod
    def single(cls, amplitude: float, frequency: float, phase: float | None = None) -> "AcSignal":
        if phase is None:
            return cls((Tone(amplitude, frequency),), "uniform_random")
        return cls((Tone(amplitude, frequency, phase),), "fixed")

    @property
    def n_tones(self) -> int:
        return len(self.tones)


@dataclass(frozen=True)
class CarbonSpin:
    hyperfine: HyperfineParams = C13_HYPERFINE
    gamma_n: float = GAMMA_C13
    initial_state: str = "thermal"

    def __post_init__(self):
        if self.initial_state not in ("thermal", "polarized"):
            raise ValueError(f"unknown initial state {self.initial_state!r}")


@dataclass(frozen=True)
class SensingWindow:
    """An XY8-N block starting at ``t_start`` with pulse spacing ``tau``."""

    t_start: float
    n_pulses: int
    tau: float

    @property
    def t_meas(self) -> float:
        return self.n_pulses * self.tau

    def interval_edges(self) -> np.ndarray:
        """Boundaries of the free-evolution intervals (pulses sit at the inner edges)."""
        inner = self.t_start + self.tau * (0.5 + np.arange(self.n_pulses))
        return np.concatenate(([self.t_start], inner, [self.t_start + self.t_meas]))


def _phases(sig: AcSignal, phases):
    if phases is None:
        return [np.asarray(t.phase, dtype=float) for t in sig.tones]
    if len(phases) != sig.n_tones:
        raise ValueError("need one phase (array) per tone")
    return [np.asarray(p, dtype=float) for p in phases]


def value(sig: AcSignal, t, phases=None):
    """Field in Tesla at time(s) ``t``; ``phases`` overrides per-tone phases."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(np.broadcast_shapes(t.shape, *[np.shape(p) for p in _phases(sig, phases)]))
    for tone, ph in zip(sig.tones, _phases(sig, phases)):
        out = out + tone.amplitude * np.cos(TWO_PI * tone.frequency * t + ph)
    return out


def interval_phases(sig: AcSignal, edges: np.ndarray, phases=None, gamma_e: float = GAMMA_E):
    """gamma_e * integral of V over each interval between consecutive ``edges``.

    Returns an array of shape ``phase_shape + (len(edges) - 1,)``.
    """
    edges = np.asarray(edges, dtype=float)
    total = 0.0
    for tone, ph in zip(sig.tones, _phases(sig, phases)):
        w = TWO_PI * tone.frequency
        ph = np.asarray(ph)[..., None]
        if w == 0:
            integ = np.cos(ph) * np.diff(edges)
        else:
            s = np.sin(w * edges + ph)
            integ = (s[..., 1:] - s[..., :-1]) / w
        total = total + tone.amplitude * integ
    return gamma_e * np.asarray(total)


def accumulated_phase(sig: AcSignal, window: SensingWindow, mode: str = "exact", phases=None,
                      gamma_e: float = GAMMA_E):
    """Net phase of one XY8 block.

    ``first_harmonic``: (2 gamma_e t_meas / pi) V(t_start).
    ``exact``: integral of the field with the sign toggled at every pi pulse.
    """
    if mode == "first_harmonic":
        return 2.0 * gamma_e * window.t_meas / math.pi * value(sig, window.t_start, phases)
    if mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")
    pieces = interval_phases(sig, window.interval_edges(), phases, gamma_e)
    signs = (-1.0) ** np.arange(pieces.shape[-1])
    return pieces @ signs


def phase_nodes(n: int = DEFAULT_PHASE_NODES):
    """Gauss-Legendre nodes and weights mapped to [0, 2 pi); weights sum to one."""
    x, w = np.polynomial.legendre.leggauss(n)
    return math.pi * (x + 1.0), 0.5 * w


def phase_grid(n_tones: int, n: int = DEFAULT_PHASE_NODES):
    """Tensor-product phase nodes, shape (n**n_tones,) per tone, and weights."""
    x, w = phase_nodes(n)
    if n_tones == 0:
        return [], np.ones(1)
    grids = np.meshgrid(*([x] * n_tones), indexing="ij")
    weights = np.ones_like(grids[0])
    for wg in np.meshgrid(*([w] * n_tones), indexing="ij"):
        weights = weights * wg
    return [g.ravel() for g in grids], weights.ravel()


def correlation_windows(xy8_tau: float, n_pulses: int, t: float, t_a: float = 0.0):
    """The two sensing windows of the correlation protocol separated by ``t``."""
    w1 = SensingWindow(t_a, n_pulses, xy8_tau)
    w2 = SensingWindow(t_a + w1.t_meas + t, n_pulses, xy8_tau)
    return w1, w2


def peak_phase(amplitude: float, t_meas: float, gamma_e: float = GAMMA_E) -> float:
    return 2.0 * gamma_e * amplitude * t_meas / math.pi


def p0_weak(amplitude: float, t_meas: float, gamma_e: float = GAMMA_E) -> float:
    """Weak-signal correlation amplitude 2 gamma_e^2 V0^2 t_meas^2 / pi^2."""
    return 2.0 * gamma_e ** 2 * amplitude ** 2 * t_meas ** 2 / math.pi ** 2


def analytic_p(sig: AcSignal, window: SensingWindow, t, gamma_e: float = GAMMA_E):
    """Weak-signal correlation probability ``(1 - sum_k p0_k cos(2 pi f_k t)) / 2``.

    The lag is measured between block starts (t_meas + t), which equals the
    plain ``t`` for tones on the XY8 resonance.
    """
    t = np.asarray(t, dtype=float)
    corr = np.zeros_like(t)
    for tone in sig.tones:
        p0 = p0_weak(tone.amplitude, window.t_meas, gamma_e)
        corr = corr + p0 * np.cos(TWO_PI * tone.frequency * (window.t_meas + t))
    return 0.5 * (1.0 - corr)


def general_correlation(sig: AcSignal, window: SensingWindow, t, mode: str = "exact",
                        n_nodes: int = DEFAULT_PHASE_NODES, gamma_e: float = GAMMA_E):
    """``(1 - <sin Phi1 sin Phi2>) / 2`` averaged over the tone phases.

    Deterministic Gauss-Legendre quadrature over each independent tone phase;
    a ``fixed`` phase policy skips the average.
    """
    scalar = np.ndim(t) == 0
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if sig.phase_policy == "fixed":
        phases, weights = None, np.ones(1)
    else:
        phases, weights = phase_grid(sig.n_tones, n_nodes)
    out = np.empty(ts.shape)
    for i, ti in enumerate(ts):
        w1, w2 = correlation_windows(window.tau, window.n_pulses, ti, window.t_start)
        phi1 = accumulated_phase(sig, w1, mode, phases, gamma_e)
        phi2 = accumulated_phase(sig, w2, mode, phases, gamma_e)
        out[i] = 0.5 * (1.0 - np.sum(weights * np.sin(phi1) * np.sin(phi2)))
    return out[0] if scalar else out
