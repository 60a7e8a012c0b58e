"""Scenario configuration: strict YAML schema, defaults, validation and presets.

Every field has a default; unknown keys are rejected with the dotted path of
the offending entry. Frequencies are in Hz, times in s, fields in T.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field as _field, fields, is_dataclass, asdict
import math
import os
import types
import typing

import numpy as np
import yaml

SCENARIO_KINDS = ("ac", "drift", "nmr", "nmr_curve", "readout", "rabi")
WORKERS_ENV = "MEMSPEC_WORKERS"


class ConfigError(ValueError):
    """Raised for schema or physics-sanity violations; the message names the field path."""


@dataclass
class TGrid:
    """``values`` if given, else ``count`` points from ``start`` spaced ``(stop - start) / count``."""

    start: float = 0.0
    stop: float = 1e-3
    count: int = 100
    values: list | None = None

    def points(self) -> np.ndarray:
        if self.values is not None:
            return np.asarray(self.values, dtype=float)
        return self.start + (self.stop - self.start) * np.arange(self.count) / self.count


@dataclass
class FieldBlock:
    B0: float = 0.32002
    nucleus: str = "N15"


@dataclass
class HyperfineBlock:
    a_parallel_Hz: float | None = None
    a_perp_Hz: float | None = None


@dataclass
class RelaxationBlock:
    T1_electron: float = math.inf
    T2_electron: float = math.inf
    T1_nuclear_dark: float = math.inf
    T1_nuclear_readout: float = math.inf


@dataclass
class Xy8Block:
    N: int = 8
    f_target_Hz: float | None = 6.626070e6
    tau: float | None = None
    dead_time: float = 20e-9


@dataclass
class ProtocolBlock:
    memory_enabled: bool = True
    retrieve_variant: str = "double_cnot"
    readout_repeats: int = 1000
    cnot_e: float = 1.0
    cnot_n: float = 1.0
    reinit_before_retrieve: bool = True
    max_wait: float = 0.1
    timed: bool = False
    phase_mode: str = "exact"
    phase_nodes: int = 256


@dataclass
class ToneBlock:
    amplitude_T: float = 5e-6
    frequency_Hz: float = 6.626070e6
    phase: float | None = None


@dataclass
class SignalBlock:
    tones: list = _field(default_factory=lambda: [ToneBlock()])
    phase_policy: str = "uniform_random"


@dataclass
class ReadoutBlock:
    photons_bright: float = 0.03
    photons_dark: float = 0.02
    repolarization_constant: float = 1.2e-3
    readout_period: float = 1e-6
    pumped_bright: float = 0.0
    shots: int = 0
    n_values: list = _field(default_factory=lambda: [1, 10, 100, 300, 1000, 3000])
    fisher_samples: int = 4000


@dataclass
class AnalysisBlock:
    window: str = "rect"
    zero_pad: int = 4
    model: str = "auto"
    fit_window_Hz: list | None = None
    n_peaks: int = 1
    f_guess_Hz: float | None = None


@dataclass
class DecouplingBlock:
    kind: str = "none"
    frequency_Hz: float = 0.0
    count: int | None = None
    spacing: str = "balanced"
    period: float = 0.0
    duration: float = 0.0
    dead_time: float = 50e-9


@dataclass
class NmrBlock:
    B0: float = 0.24
    a_parallel_Hz: float = -138.9e3
    a_perp_Hz: float = 120.55e3
    initial_state: str = "thermal"
    electron_T1: float = 1.4e-3
    memory_T1: float = math.inf
    sensing_pulses: int = 8
    trajectories: int = 2000
    t_max: float = 0.05
    decoupling: DecouplingBlock = _field(default_factory=DecouplingBlock)
    curve_frequencies_Hz: list = _field(default_factory=list)
    batches: int = 8


@dataclass
class DriftBlock:
    datasets: int = 24
    nuclear_frequency_Hz: float = 2.568e6
    decay_time: float = 1.4e-3
    amplitude: float = 0.05
    noise: float = 0.002
    shift_spread_Hz: float = 3.0e3
    dataset_interval: float = 60.0
    tracking_noise_Hz: float = 33e3
    method: str = "demodulate"


@dataclass
class RabiBlock:
    mode: str = "electron"
    rabi_frequency_Hz: float = 0.7e6
    transition: str = "mw1"


@dataclass
class ScenarioConfig:
    name: str = "custom"
    kind: str = "ac"
    master_seed: int = 0
    output_dir: str = "runs"
    workers: int | None = None
    t_grid: TGrid = _field(default_factory=TGrid)
    field: FieldBlock = _field(default_factory=FieldBlock)
    hyperfine: HyperfineBlock = _field(default_factory=HyperfineBlock)
    relaxation: RelaxationBlock = _field(default_factory=RelaxationBlock)
    xy8: Xy8Block = _field(default_factory=Xy8Block)
    protocol: ProtocolBlock = _field(default_factory=ProtocolBlock)
    signal: SignalBlock = _field(default_factory=SignalBlock)
    readout: ReadoutBlock = _field(default_factory=ReadoutBlock)
    analysis: AnalysisBlock = _field(default_factory=AnalysisBlock)
    nmr: NmrBlock = _field(default_factory=NmrBlock)
    drift: DriftBlock = _field(default_factory=DriftBlock)
    rabi: RabiBlock = _field(default_factory=RabiBlock)

    def resolved_workers(self) -> int:
        if self.workers is not None:
            return self.workers
        env = os.environ.get(WORKERS_ENV)
        if env:
            try:
                return max(1, int(env))
            except ValueError as exc:
                raise ConfigError(f"{WORKERS_ENV}={env!r} is not an integer") from exc
        return 1

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


# -- strict loading ----------------------------------------------------------------

_LIST_ITEM_TYPES = {("SignalBlock", "tones"): ToneBlock}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def _coerce(value, annotation, path: str):
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if annotation is float:
        if isinstance(value, bool):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: expected a number, got {value!r}") from exc
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if annotation is list or origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return list(value)
    if is_dataclass(annotation):
        return _build(annotation, value, path)
    return value


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping, got {data!r}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            where = f"{path}.{key}" if path else str(key)
            raise ConfigError(f"{where}: unknown key (allowed: {', '.join(sorted(known))})")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        sub = f"{path}.{f.name}" if path else f.name
        value = _coerce(data[f.name], hints[f.name], sub)
        item_cls = _LIST_ITEM_TYPES.get((cls.__name__, f.name))
        if item_cls is not None:
            value = [_build(item_cls, v, f"{sub}[{i}]") for i, v in enumerate(value)]
        kwargs[f.name] = value
    return cls(**kwargs)


def from_dict(data: dict) -> ScenarioConfig:
    cfg = _build(ScenarioConfig, data, "")
    validate(cfg)
    return cfg


def load(path: str, overrides: list | None = None) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: YAML syntax error: {exc}") from exc
    return from_dict(apply_overrides(data, overrides or []))


def apply_overrides(data: dict, overrides: list) -> dict:
    """Apply ``dotted.key=value`` overrides; values are parsed as YAML scalars."""
    data = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {part} is not a mapping")
        node[parts[-1]] = value
    return data


# -- validation ------------------------------------------------------------------------

def _check(cond: bool, path: str, msg: str):
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def xy8_tau(cfg: ScenarioConfig) -> float:
    if cfg.xy8.tau is not None:
        return cfg.xy8.tau
    return 1.0 / (2.0 * cfg.xy8.f_target_Hz)


def validate(cfg: ScenarioConfig) -> dict:
    """Schema and physics sanity checks; returns a report with derived quantities."""
    _check(cfg.kind in SCENARIO_KINDS, "kind", f"must be one of {SCENARIO_KINDS}")
    _check(cfg.field.nucleus in ("N15", "C13"), "field.nucleus", "must be N15 or C13")
    _check(cfg.field.B0 > 0, "field.B0", "must be positive")
    _check(cfg.workers is None or cfg.workers >= 1, "workers", "must be >= 1")
    t = cfg.t_grid.points()
    _check(t.size >= 1, "t_grid", "needs at least one point")
    _check(bool(np.all(np.diff(t) > 0)), "t_grid", "points must be strictly increasing")
    _check(t[0] >= 0, "t_grid.start", "must be >= 0")
    report = {"name": cfg.name, "kind": cfg.kind, "t_points": int(t.size),
              "t_first_s": float(t[0]), "t_last_s": float(t[-1])}
    if t.size > 1:
        report["sample_rate_Hz"] = float(1.0 / np.mean(np.diff(t)))
    p = cfg.protocol
    _check(p.retrieve_variant in ("double_cnot", "single_cnot_reinit"), "protocol.retrieve_variant",
           "must be double_cnot or single_cnot_reinit")
    _check(1 <= p.readout_repeats <= 10_000, "protocol.readout_repeats", "must be within 1..10000")
    _check(0 <= p.cnot_e <= 1 and 0 <= p.cnot_n <= 1, "protocol.cnot_e/cnot_n", "must be in [0, 1]")
    _check(p.phase_mode in ("exact", "first_harmonic"), "protocol.phase_mode",
           "must be exact or first_harmonic")
    _check(p.phase_nodes >= 8, "protocol.phase_nodes", "must be >= 8")
    if cfg.kind == "ac":
        _check(cfg.xy8.N > 0 and cfg.xy8.N % 8 == 0, "xy8.N", "must be a positive multiple of 8")
        _check(cfg.xy8.tau is not None or cfg.xy8.f_target_Hz is not None, "xy8",
               "needs tau or f_target_Hz")
        tau = xy8_tau(cfg)
        _check(tau >= cfg.xy8.dead_time, "xy8.tau",
               f"pulse spacing {tau:.4g} s is shorter than the pulse dead time {cfg.xy8.dead_time:.4g} s")
        _check(t[-1] <= p.max_wait, "t_grid",
               f"longest waiting time {t[-1]:.4g} s exceeds protocol.max_wait {p.max_wait:.4g} s")
        _check(len(cfg.signal.tones) >= 1, "signal.tones", "needs at least one tone")
        _check(cfg.signal.phase_policy in ("uniform_random", "fixed"), "signal.phase_policy",
               "must be uniform_random or fixed")
        for i, tone in enumerate(cfg.signal.tones):
            _check(tone.amplitude_T >= 0, f"signal.tones[{i}].amplitude_T", "must be >= 0")
            if cfg.signal.phase_policy == "fixed":
                _check(tone.phase is not None, f"signal.tones[{i}].phase", "required for a fixed phase policy")
        report.update({"tau_s": tau, "t_meas_s": cfg.xy8.N * tau, "f_target_Hz": 1.0 / (2 * tau)})
    r = cfg.readout
    _check(r.photons_bright >= 0 and r.photons_dark >= 0, "readout", "photon yields must be >= 0")
    _check(r.shots >= 0, "readout.shots", "must be >= 0")
    if r.shots > 0 or cfg.kind == "readout":
        _check(r.photons_bright != r.photons_dark, "readout.photons_bright",
               "equals photons_dark; the probability cannot be estimated")
    a = cfg.analysis
    _check(a.window in ("rect", "hann"), "analysis.window", "must be rect or hann")
    _check(a.zero_pad >= 1, "analysis.zero_pad", "must be >= 1")
    _check(a.model in ("auto", "lorentzian", "gaussian", "sinc_sq"), "analysis.model", "unknown peak model")
    _check(a.n_peaks >= 1, "analysis.n_peaks", "must be >= 1")
    if a.fit_window_Hz is not None:
        _check(len(a.fit_window_Hz) == 2 and a.fit_window_Hz[0] < a.fit_window_Hz[1],
               "analysis.fit_window_Hz", "must be [low, high]")
    if cfg.kind in ("nmr", "nmr_curve"):
        n = cfg.nmr
        _check(n.trajectories >= 1, "nmr.trajectories", "must be >= 1")
        _check(t[-1] <= n.t_max, "t_grid", f"longest waiting time {t[-1]:.4g} s exceeds nmr.t_max {n.t_max:.4g} s")
        _check(n.sensing_pulses > 0 and n.sensing_pulses % 8 == 0, "nmr.sensing_pulses",
               "must be a positive multiple of 8")
        _check(n.initial_state in ("thermal", "polarized"), "nmr.initial_state", "must be thermal or polarized")
        d = n.decoupling
        if d.kind == "pi_train" and d.spacing != "count":
            _check(d.frequency_Hz > 0, "nmr.decoupling.frequency_Hz", "must be positive for a pi train")
            _check(1.0 / d.frequency_Hz >= d.dead_time, "nmr.decoupling.frequency_Hz",
                   f"pulse period {1.0 / d.frequency_Hz:.4g} s is shorter than the dead time {d.dead_time:.4g} s")
        if cfg.kind == "nmr_curve":
            _check(len(n.curve_frequencies_Hz) >= 2, "nmr.curve_frequencies_Hz", "needs at least two frequencies")
            for i, f in enumerate(n.curve_frequencies_Hz):
                _check(1.0 / f >= d.dead_time, f"nmr.curve_frequencies_Hz[{i}]",
                       "pulse period shorter than the dead time")
    if cfg.kind == "drift":
        _check(cfg.drift.datasets >= 1, "drift.datasets", "must be >= 1")
        _check(cfg.drift.method in ("demodulate", "shift", "none"), "drift.method",
               "must be demodulate, shift or none")
    if cfg.kind == "rabi":
        _check(cfg.rabi.mode in ("electron", "nuclear", "store_retrieve", "clear_control", "double_rotation"),
               "rabi.mode", "unknown Rabi mode")
    return report


# -- presets ------------------------------------------------------------------------------

_AC = {"kind": "ac", "xy8": {"N": 8, "f_target_Hz": 6.626070e6},
       "signal": {"tones": [{"amplitude_T": 5e-6, "frequency_Hz": 6.626070e6}]}}

PRESETS = {
    "fig3_no_memory": {
        **_AC, "relaxation": {"T1_electron": 0.5e-3},
        "protocol": {"memory_enabled": False},
        "t_grid": {"start": 0.0, "stop": 0.01, "count": 200},
        "analysis": {"model": "lorentzian", "fit_window_Hz": [3000.0, 9000.0], "f_guess_Hz": 6.626e6},
    },
    "fig3_memory": {
        **_AC, "relaxation": {"T1_electron": 0.5e-3, "T1_nuclear_dark": 52e-3},
        "t_grid": {"start": 0.0, "stop": 155 / 3450, "count": 155},
        "analysis": {"model": "auto", "fit_window_Hz": [1200.0, 1560.0], "f_guess_Hz": 6.626e6},
    },
    "fig3d_two_tone": {
        **_AC, "relaxation": {"T1_electron": 0.5e-3, "T1_nuclear_dark": 52e-3},
        "signal": {"tones": [{"amplitude_T": 5e-6, "frequency_Hz": 6.62611579e6},
                             {"amplitude_T": 5e-6, "frequency_Hz": 6.62632107e6}]},
        "protocol": {"phase_nodes": 64},
        "t_grid": {"start": 0.0, "stop": 155 / 3450, "count": 155},
        "analysis": {"model": "sinc_sq", "fit_window_Hz": [1030.0, 1430.0], "n_peaks": 2,
                     "f_guess_Hz": 6.626e6},
    },
    "fig4a_drift": {
        "kind": "drift", "drift": {"method": "none"},
        "t_grid": {"start": 0.0, "stop": 0.014, "count": 280},
        "analysis": {"model": "lorentzian", "f_guess_Hz": 2.568e6},
    },
    "fig4b_corrected": {
        "kind": "drift", "drift": {"method": "demodulate"},
        "t_grid": {"start": 0.0, "stop": 0.014, "count": 280},
        "analysis": {"model": "lorentzian", "f_guess_Hz": 2.568e6},
    },
    "fig4c_dd": {
        "kind": "nmr", "field": {"B0": 0.24, "nucleus": "C13"},
        "nmr": {"decoupling": {"kind": "pi_train", "frequency_Hz": 250e3}},
        "t_grid": {"start": 5e-6, "stop": 5e-6 + 79 / 5610, "count": 79},
        "analysis": {"model": "lorentzian", "f_guess_Hz": 2.5e6},
    },
    "fig4d_repump": {
        "kind": "nmr", "field": {"B0": 0.24, "nucleus": "C13"},
        "nmr": {"decoupling": {"kind": "repump", "period": 0.5e-3, "duration": 1e-6}},
        "t_grid": {"start": 5e-6, "stop": 5e-6 + 79 / 5610, "count": 79},
        "analysis": {"model": "lorentzian", "f_guess_Hz": 2.568e6},
    },
    "suppfig6_curve": {
        "kind": "nmr_curve", "field": {"B0": 0.24, "nucleus": "C13"},
        "nmr": {"trajectories": 1000, "curve_frequencies_Hz": [10e3, 20e3, 40e3, 80e3, 140e3, 1.4e6, 2e6]},
        "t_grid": {"start": 5e-6, "stop": 5e-6 + 168 / 5610, "count": 168},
        "analysis": {"model": "lorentzian"},
    },
    "suppfig3_readout": {
        "kind": "readout", "readout": {"repolarization_constant": 1.2e-3, "readout_period": 3.6e-6, "shots": 2000},
        "protocol": {"readout_repeats": 1000},
        "t_grid": {"values": [0.5]},
    },
    "suppfig5_rabi": {
        "kind": "rabi", "rabi": {"mode": "electron", "rabi_frequency_Hz": 0.7e6},
        "t_grid": {"start": 0.0, "stop": 5e-6, "count": 100},
    },
}


def list_presets() -> list:
    return list(PRESETS)


def preset(name: str, overrides: list | None = None) -> ScenarioConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r} (available: {', '.join(PRESETS)})")
    data = copy.deepcopy(PRESETS[name])
    data["name"] = name
    data.setdefault("output_dir", f"runs/{name}")
    return from_dict(apply_overrides(data, overrides or []))
