"""Pulse-level correlation protocol with an optional nuclear-spin memory.

Sequences are flat, time-ordered lists of :class:`PulseEvent`. Builders
produce them; :func:`execute` interprets them on the density-matrix engine
of :mod:`memspec.qsys`.

Gate conventions
----------------
* c-NOT_e: selective pi pulse on ``mw1`` (electron flips when the nucleus is
  in ``|0_n>``).
* c-NOT_n: selective pi pulse on ``rf1`` (nucleus flips when the electron is
  in ``|0_e>``).
* store (electron -> memory): c-NOT_n then c-NOT_e, with the nucleus
  initialised in ``|0_n>``; leaves the electron in ``|0_e>``.
* retrieve, double c-NOT: c-NOT_e then c-NOT_n, with the electron in
  ``|0_e>``; leaves the nucleus in ``|0_n>``.
* retrieve, single c-NOT: laser re-initialisation then c-NOT_e; the nuclear
  populations are untouched, so the memory can be read repeatedly.

The sensing blocks are flanked by hard pi/2 pulses about X (opening) and
about -Y (first block) or +Y (second block), which gives
``P(0_e) = (1 + sin Phi1) / 2`` after the first block and
``p = (1 - sin Phi1 sin Phi2) / 2`` at the end.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np

from . import qsys
from .qsys import SpinBasis, RelaxationParams
from .signals import AcSignal, SensingWindow, interval_phases, phase_grid, accumulated_phase

CHANNELS = ("laser", "microwave", "rf", "wait", "detector_gate")
RETRIEVE_VARIANTS = ("double_cnot", "single_cnot_reinit")
XY8_PHASES = (0.0, 0.5 * math.pi, 0.0, 0.5 * math.pi, 0.5 * math.pi, 0.0, 0.5 * math.pi, 0.0)

# nominal carriers used for bookkeeping only
MW_CARRIER = 6.097e9
RF_CARRIER = 1.381e6


class SequenceError(ValueError):
    pass


@dataclass(frozen=True)
class PulseEvent:
    channel: str
    start: float
    duration: float = 0.0
    carrier: float = 0.0
    phase: float = 0.0
    transition: str = ""
    angle: float = 0.0
    label: str = ""

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise SequenceError(f"unknown channel {self.channel!r}")
        if self.start < 0 or self.duration < 0:
            raise SequenceError("start and duration must be >= 0")

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass
class PulseSequence:
    events: list = field(default_factory=list)
    total_duration: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.events = sorted(self.events, key=lambda e: e.start)
        end = max((e.end for e in self.events), default=0.0)
        self.total_duration = max(self.total_duration, end)

    def validate(self, tol: float = 1e-15) -> None:
        """Raise :class:`SequenceError` on same-channel overlaps."""
        starts = [e.start for e in self.events]
        if starts != sorted(starts):
            raise SequenceError("events not sorted by start time")
        last_end = {}
        for e in self.events:
            prev = last_end.get(e.channel)
            if prev is not None and e.start < prev - tol:
                raise SequenceError(f"overlapping {e.channel} events at t={e.start:.9g} s")
            last_end[e.channel] = max(prev or 0.0, e.end)
        if self.total_duration < max((e.end for e in self.events), default=0.0) - tol:
            raise SequenceError("total_duration shorter than the last event")

    def count(self, channel: str | None = None, angle: float | None = None) -> int:
        return sum(1 for e in self.events
                   if (channel is None or e.channel == channel)
                   and (angle is None or math.isclose(e.angle, angle, abs_tol=1e-12)))

    def to_text(self) -> str:
        """One event per line: channel start_ns duration_ns carrier_Hz phase_deg transition angle_deg."""
        lines = ["# channel start_ns duration_ns carrier_Hz phase_deg transition angle_deg label"]
        for e in self.events:
            lines.append(
                f"{e.channel} {e.start * 1e9:.6f} {e.duration * 1e9:.6f} {e.carrier:.6f} "
                f"{math.degrees(e.phase):.6f} {e.transition or '-'} {math.degrees(e.angle):.6f} "
                f"{e.label or '-'}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PulseSequence":
        events = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (7, 8):
                raise SequenceError(f"malformed schedule line: {line!r}")
            ch, st, du, ca, ph, tr, an = parts[:7]
            lab = parts[7] if len(parts) == 8 else "-"
            events.append(PulseEvent(ch, float(st) * 1e-9, float(du) * 1e-9, float(ca),
                                     math.radians(float(ph)), "" if tr == "-" else tr,
                                     math.radians(float(an)), "" if lab == "-" else lab))
        return cls(events)

    def shifted(self, dt: float) -> list:
        return [replace(e, start=e.start + dt) for e in self.events]


@dataclass(frozen=True)
class Xy8Params:
    N: int
    tau: float

    def __post_init__(self):
        if self.N <= 0 or self.N % 8:
            raise SequenceError(f"XY8 pulse count must be a positive multiple of 8, got {self.N}")
        if not self.tau > 0:
            raise SequenceError("tau must be positive")

    @classmethod
    def from_frequency(cls, N: int, f_target: float) -> "Xy8Params":
        return cls(N, 1.0 / (2.0 * f_target))

    @property
    def t_meas(self) -> float:
        return self.N * self.tau

    @property
    def f_target(self) -> float:
        return 1.0 / (2.0 * self.tau)


@dataclass(frozen=True)
class GateTimings:
    """Pulse durations used for schedule bookkeeping (seconds)."""

    mw_pi: float = 0.7e-6
    rf_pi: float = 30e-6
    rf_ringdown: float = 1.5e-6
    laser_reinit: float = 1.3e-6
    laser_init: float = 3e-6
    readout_period: float = 1.0e-6

    @property
    def double_access(self) -> float:
        return self.rf_pi + self.rf_ringdown + self.mw_pi

    @property
    def single_access(self) -> float:
        return self.laser_reinit + self.mw_pi


INSTANT = GateTimings(mw_pi=0.0, rf_pi=0.0, rf_ringdown=0.0, laser_reinit=0.0, laser_init=0.0,
                      readout_period=0.0)


@dataclass(frozen=True)
class ProtocolConfig:
    memory_enabled: bool = True
    retrieve_variant: str = "double_cnot"
    readout_repeats: int = 1000
    cnot_e: float = 1.0
    cnot_n: float = 1.0
    reinit_before_retrieve: bool = True
    max_wait: float = 0.1
    timed: bool = False

    def __post_init__(self):
        if self.retrieve_variant not in RETRIEVE_VARIANTS:
            raise SequenceError(f"unknown retrieve variant {self.retrieve_variant!r}")
        if not 1 <= self.readout_repeats <= 10_000:
            raise SequenceError("readout_repeats must be within 1..10000")
        for name in ("cnot_e", "cnot_n"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SequenceError(f"{name} efficiency must be in [0, 1]")

    @property
    def gate_efficiency(self) -> dict:
        return {"mw1": self.cnot_e, "mw2": self.cnot_e, "rf1": self.cnot_n, "rf2": self.cnot_n}


# -- builders ---------------------------------------------------------------

def _mw(start, transition, angle, phase=0.0, duration=0.0, label=""):
    return PulseEvent("microwave", start, duration, MW_CARRIER, phase, transition, angle, label)


def _rf(start, transition, angle, phase=0.0, duration=0.0, label=""):
    return PulseEvent("rf", start, duration, RF_CARRIER, phase, transition, angle, label)


def build_xy8(params: Xy8Params, t_start: float = 0.0, quadrature: int = +1,
              label: str = "sense") -> PulseSequence:
    """XY8-N block: pi/2_X, N pi pulses spaced tau (tau/2 at the ends), closing pi/2.

    ``quadrature=+1`` maps the accumulated phase to ``P(0_e) = (1 + sin Phi)/2``
    for an electron starting in ``|0_e>``; ``-1`` flips the closing axis.
    """
    if quadrature not in (1, -1):
        raise SequenceError("quadrature must be +1 or -1")
    tau = params.tau
    events = [_mw(t_start, "e", 0.5 * math.pi, 0.0, label=label + ":open")]
    pulse_times = t_start + tau * (0.5 + np.arange(params.N))
    edges = np.concatenate(([t_start], pulse_times, [t_start + params.t_meas]))
    for k in range(params.N + 1):
        events.append(PulseEvent("wait", float(edges[k]), float(edges[k + 1] - edges[k]), label=label))
        if k < params.N:
            events.append(_mw(float(pulse_times[k]), "e", math.pi, XY8_PHASES[k % 8], label=label))
    close_phase = -0.5 * math.pi if quadrature > 0 else 0.5 * math.pi
    events.append(_mw(t_start + params.t_meas, "e", 0.5 * math.pi, close_phase, label=label + ":close"))
    return PulseSequence(events, t_start + params.t_meas,
                         {"protocol": "xy8", "N": params.N, "tau": tau, "t_meas": params.t_meas})


def store_composite(t0: float = 0.0, timings: GateTimings = INSTANT, label: str = "store") -> list:
    """Electron -> nuclear memory: c-NOT_n (rf1) then c-NOT_e (mw1)."""
    rf_end = t0 + timings.rf_pi + timings.rf_ringdown
    return [
        _rf(t0, "rf1", math.pi, duration=timings.rf_pi, label=label),
        _mw(rf_end, "mw1", math.pi, duration=timings.mw_pi, label=label),
    ]


def retrieve_composite(variant: str, t0: float = 0.0, timings: GateTimings = INSTANT,
                       label: str = "retrieve") -> list:
    """Memory -> electron.

    ``double_cnot``: c-NOT_e then c-NOT_n (electron must be in ``|0_e>``).
    ``single_cnot_reinit``: laser re-initialisation then one c-NOT_e.
    """
    if variant == "double_cnot":
        return [
            _mw(t0, "mw1", math.pi, duration=timings.mw_pi, label=label),
            _rf(t0 + timings.mw_pi, "rf1", math.pi, duration=timings.rf_pi, label=label),
        ]
    if variant == "single_cnot_reinit":
        return [
            PulseEvent("laser", t0, timings.laser_reinit, label=label + ":reinit"),
            _mw(t0 + timings.laser_reinit, "mw1", math.pi, duration=timings.mw_pi, label=label),
        ]
    raise SequenceError(f"unknown retrieve variant {variant!r}")


def composite_duration(events: list) -> float:
    if not events:
        return 0.0
    return max(e.end for e in events) - min(e.start for e in events)


def access_time(variant: str, timings: GateTimings = GateTimings()) -> float:
    """Memory access time including rf ring-down where applicable."""
    if variant == "double_cnot":
        return timings.double_access
    if variant == "single_cnot_reinit":
        return timings.single_access
    raise SequenceError(f"unknown retrieve variant {variant!r}")


def correlation_protocol(cfg: ProtocolConfig, xy8: Xy8Params, t: float,
                         timings: GateTimings | None = None) -> PulseSequence:
    """init -> XY8 (t_A..t_B) -> [store] wait t [retrieve] -> XY8 (t_C..t_D) -> readout.

    ``t = t_C - t_B``; store and retrieve happen inside the waiting period.
    """
    if t < 0:
        raise SequenceError("waiting time must be >= 0")
    if t > cfg.max_wait:
        raise SequenceError(f"waiting time {t} s exceeds the configured maximum {cfg.max_wait} s")
    if timings is None:
        timings = GateTimings() if cfg.timed else INSTANT
    events = [PulseEvent("laser", 0.0, timings.laser_init, label="init")]
    t_a = timings.laser_init
    block1 = build_xy8(xy8, t_a, +1, "sense1")
    events += block1.events
    t_b = t_a + xy8.t_meas
    t_c = t_b + t
    if cfg.memory_enabled:
        store = store_composite(t_b, timings)
        s_end = max(e.end for e in store)
        retrieve_ev, offset = [], 0.0
        if cfg.retrieve_variant == "double_cnot" and cfg.reinit_before_retrieve:
            retrieve_ev.append(PulseEvent("laser", 0.0, timings.laser_reinit, label="clear"))
            offset = timings.laser_reinit
        retrieve_ev += retrieve_composite(cfg.retrieve_variant, offset, timings)
        r_len = max(e.end for e in retrieve_ev)
        if cfg.retrieve_variant == "double_cnot":
            r_len += timings.rf_ringdown
        hold = t_c - r_len - s_end
        if hold < -1e-15:
            raise SequenceError(f"waiting time {t} s shorter than the memory access time")
        events += store
        events.append(PulseEvent("wait", s_end, max(hold, 0.0), label="correlation"))
        events += [replace(e, start=e.start + t_c - r_len) for e in retrieve_ev]
    else:
        events.append(PulseEvent("wait", t_b, t, label="correlation"))
    block2 = build_xy8(xy8, t_c, -1, "sense2")
    events += block2.events
    t_d = t_c + xy8.t_meas
    end = t_d
    if cfg.memory_enabled:
        final_store = store_composite(t_d, timings, label="final_store")
        events += final_store
        end = max(e.end for e in final_store)
        period = max(timings.readout_period, timings.single_access)
        for k in range(cfg.readout_repeats):
            t0 = end + k * period
            events.append(PulseEvent("laser", t0, timings.laser_reinit, label="readout"))
            events.append(_mw(t0 + timings.laser_reinit, "mw1", math.pi, duration=timings.mw_pi,
                              label="readout"))
            events.append(PulseEvent("detector_gate", t0 + timings.single_access, 0.0, label="readout"))
        end = end + cfg.readout_repeats * period
    else:
        events.append(PulseEvent("laser", t_d, timings.laser_reinit, label="readout"))
        events.append(PulseEvent("detector_gate", t_d, timings.laser_reinit, label="readout"))
        end = t_d + timings.laser_reinit
    meta = {"protocol": "correlation", "t": t, "t_A": t_a, "t_B": t_b, "t_C": t_c, "t_D": t_d,
            "t_meas": xy8.t_meas, "N": xy8.N, "tau": xy8.tau, "memory": cfg.memory_enabled,
            "retrieve_variant": cfg.retrieve_variant, "readout_repeats": cfg.readout_repeats}
    seq = PulseSequence(events, end, meta)
    seq.validate()
    return seq


# -- interpreter --------------------------------------------------------------

@dataclass(frozen=True)
class Engine:
    """Configuration of the density-matrix engine used by :func:`execute`.

    ``hamiltonian`` is the rotating-frame Hamiltonian; ``None`` means every
    addressed transition is on resonance (interaction picture).
    """

    relax: RelaxationParams = RelaxationParams()
    gate_efficiency: dict = field(default_factory=dict)
    basis: SpinBasis = SpinBasis()
    hamiltonian: np.ndarray | None = None
    laser_fidelity: float = 1.0
    phase_mode: str = "exact"
    phase_nodes: int = 256
    population_only_wait: bool = True

    def __hash__(self):
        return id(self)


@dataclass
class Outcome:
    p: float
    bright_probability: float
    photon_counts: np.ndarray | None = None
    rho: np.ndarray | None = None


def _laser(rho, duration, engine: Engine):
    """Electron reset plus nuclear repolarisation toward ``|0_n>`` during illumination."""
    rho = qsys.laser_reinitialize(rho, engine.laser_fidelity, engine.basis)
    t1 = engine.relax.T1_nuclear_readout
    if duration > 0 and math.isfinite(t1):
        keep = math.exp(-duration / t1)
        trace = np.trace(rho, axis1=-2, axis2=-1)[..., None, None]
        pumped = trace * qsys.basis_state(0, 0, engine.basis)
        rho = keep * rho + (1 - keep) * pumped
    return rho


def _signal_phase(signal, start, duration, phases):
    if signal is None:
        return None
    return interval_phases(signal, np.array([start, start + duration]), phases)[..., 0]


def execute(seq: PulseSequence, engine: Engine = Engine(), signal: AcSignal | None = None,
            rng=None, shots: int = 0, readout_params=None, return_state: bool = False) -> Outcome:
    """Run ``seq`` and return the correlation probability and optional photon counts.

    ``p`` is the ``|0_e>`` population when the readout stage starts (after the
    second sensing block). Random signal phases are averaged with
    deterministic quadrature; ``rng`` only drives the photon statistics.
    """
    seq.validate()
    basis = engine.basis
    h = engine.hamiltonian
    rho = qsys.basis_state(0, 0, basis)
    if signal is not None and signal.phase_policy == "uniform_random" and signal.n_tones:
        phases, weights = phase_grid(signal.n_tones, engine.phase_nodes)
    else:
        phases, weights = None, np.ones(1)
    p = None
    applied_blocks = set()
    for ev in seq.events:
        if ev.label in ("final_store", "readout") and p is None:
            p = _weighted(qsys.electron_populations(rho, basis)[..., 0], weights)
        if ev.label == "readout":
            break
        if ev.channel == "laser":
            rho = _laser(rho, ev.duration, engine)
        elif ev.channel in ("microwave", "rf"):
            if ev.transition not in ("mw1", "mw2", "rf1", "rf2", "e", "n"):
                raise SequenceError(f"event references unknown transition {ev.transition!r}")
            eff = engine.gate_efficiency.get(ev.transition, 1.0)
            rho = qsys.selective_rotation(rho, ev.transition, ev.angle, ev.phase, eff, basis)
            if ev.duration > 0:
                rho = qsys.free_evolution(rho, ev.duration, h, engine.relax, basis)
        elif ev.channel == "wait":
            if ev.label.startswith("sense") and signal is not None:
                if engine.phase_mode == "exact":
                    phi = _signal_phase(signal, ev.start, ev.duration, phases)
                    rho = qsys.phase_gate(rho, phi, basis)
                elif ev.label not in applied_blocks:
                    applied_blocks.add(ev.label)
                    n = seq.metadata.get("N") or _block_pulses(seq, ev.label)
                    win = SensingWindow(ev.start, n, _block_tau(seq, ev.label))
                    phi = accumulated_phase(signal, win, "first_harmonic", phases)
                    rho = qsys.phase_gate(rho, phi, basis)
            elif ev.label == "correlation" and engine.population_only_wait:
                rho = qsys.dephase_full(rho)
            rho = qsys.free_evolution(rho, ev.duration, h, engine.relax, basis)
    if p is None:
        p = _weighted(qsys.electron_populations(rho, basis)[..., 0], weights)
    if seq.metadata.get("memory", False) and any(e.label == "readout" for e in seq.events):
        bright = _weighted(qsys.nuclear_populations(rho, basis)[..., 1], weights)
        repeats = seq.metadata.get("readout_repeats", 1)
    else:
        bright = p
        repeats = 1
    counts = None
    if shots:
        from .readout import ReadoutParams, simulate_counts
        params = readout_params or ReadoutParams(n_repeats=repeats)
        counts = simulate_counts(bright, params, shots, np.random.default_rng(rng))
    return Outcome(float(np.clip(p, 0.0, 1.0)), float(np.clip(bright, 0.0, 1.0)), counts,
                   rho if return_state else None)


def _weighted(values, weights):
    values = np.asarray(values)
    if values.ndim == 0:
        return float(values)
    return float(np.sum(values * weights))


def _block_tau(seq: PulseSequence, label: str) -> float:
    waits = [e for e in seq.events if e.channel == "wait" and e.label == label]
    return waits[1].duration if len(waits) > 2 else 2 * waits[0].duration


def _block_pulses(seq: PulseSequence, label: str) -> int:
    return sum(1 for e in seq.events if e.channel == "microwave" and e.label == label)


def process_fidelity(channel, basis: SpinBasis = SpinBasis()) -> float:
    """Entanglement fidelity of an electron-qubit channel with the identity.

    ``channel`` maps a full-system density matrix to a full-system density
    matrix; the nucleus starts in ``|0_n>`` and is traced out at the end.
    """
    total = 0.0
    for i in range(2):
        for j in range(2):
            e_in = np.zeros((basis.n_electron, basis.n_electron), dtype=complex)
            e_in[i, j] = 1.0
            n0 = np.zeros((2, 2), dtype=complex)
            n0[0, 0] = 1.0
            out = qsys.partial_trace_nuclear(channel(np.kron(e_in, n0)), basis)
            total += out[i, j]
    return float(np.real(total)) / 4.0


def apply_events(rho: np.ndarray, events: list, engine: Engine = Engine()) -> np.ndarray:
    """Apply gate and laser events (no timing, no signal) to ``rho``."""
    for ev in sorted(events, key=lambda e: e.start):
        if ev.channel == "laser":
            rho = _laser(rho, ev.duration, engine)
        elif ev.channel in ("microwave", "rf"):
            eff = engine.gate_efficiency.get(ev.transition, 1.0)
            rho = qsys.selective_rotation(rho, ev.transition, ev.angle, ev.phase, eff, engine.basis)
    return rho


def split_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Per-task seed derived from (master_seed, index), independent of scheduling."""
    return np.random.SeedSequence(master_seed, spawn_key=(index,))
