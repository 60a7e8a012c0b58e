"""Scenario execution: simulate, analyse and write the output bundle."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
import hashlib
import json
import math
import os
from pathlib import Path
import platform
import shutil
import tempfile
import time

import numpy as np
import scipy

from . import __version__, qsys
from .config import ScenarioConfig, validate, xy8_tau
from .nmr import Decoupling, NmrScenario, linewidth_vs_decoupling, run_nmr_correlation
from .protocol import Engine, ProtocolConfig, Xy8Params, correlation_protocol, execute, split_seed
from .readout import ReadoutParams, estimate_probability, fisher_information, simulate_counts
from .signals import AcSignal, CarbonSpin, Tone
from .qsys import GAMMA_C13
from .spectra import (PeakFitError, TimeTrace, TrackingConfig, drift_correct, fit_peak,
                      half_power_width, nuclear_shift_scatter, power_spectrum, ppm, signed_alias,
                      spectrum_to_text, trace_from_text, trace_to_text, track_epr, unalias,
                      undersampling_ratio)

TWO_PI = 2.0 * math.pi


def _map(fn, tasks, workers: int):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    return [fn(t) for t in tasks]


# -- AC correlation --------------------------------------------------------------------

def ac_objects(cfg: ScenarioConfig):
    tones = [Tone(t.amplitude_T, t.frequency_Hz, t.phase or 0.0) for t in cfg.signal.tones]
    signal = AcSignal(tuple(tones), cfg.signal.phase_policy)
    xy8 = Xy8Params(cfg.xy8.N, xy8_tau(cfg))
    p = cfg.protocol
    proto = ProtocolConfig(p.memory_enabled, p.retrieve_variant, p.readout_repeats, p.cnot_e, p.cnot_n,
                           p.reinit_before_retrieve, p.max_wait, p.timed)
    r = cfg.relaxation
    # an unset T2 means no pure dephasing beyond the T1 limit
    t2 = min(r.T2_electron, 2.0 * r.T1_electron)
    relax = qsys.RelaxationParams(T1_electron=r.T1_electron, T2_electron=t2,
                                  T1_nuclear_dark=r.T1_nuclear_dark, T1_nuclear_readout=r.T1_nuclear_readout,
                                  T2_nuclear=2.0 * r.T1_nuclear_dark)
    engine = Engine(relax=relax, gate_efficiency=proto.gate_efficiency, phase_mode=p.phase_mode,
                    phase_nodes=p.phase_nodes)
    return signal, xy8, proto, engine


def readout_params(cfg: ScenarioConfig, n_repeats: int) -> ReadoutParams:
    r = cfg.readout
    return ReadoutParams(r.photons_bright, r.photons_dark, n_repeats, r.repolarization_constant,
                         r.readout_period, r.pumped_bright)


def _ac_point(args):
    cfg, index, t = args
    signal, xy8, proto, engine = ac_objects(cfg)
    seq = correlation_protocol(proto, xy8, t)
    out = execute(seq, engine, signal)
    bright = out.bright_probability if proto.memory_enabled else out.p
    if cfg.readout.shots > 0:
        n_rep = proto.readout_repeats if proto.memory_enabled else 1
        params = readout_params(cfg, n_rep)
        counts = simulate_counts(bright, params, cfg.readout.shots,
                                 np.random.default_rng(split_seed(cfg.master_seed, index)))
        est = estimate_probability(counts, params)
        return est.p_hat, est.stderr
    return bright, 0.0


def run_ac(cfg: ScenarioConfig, workers: int) -> TimeTrace:
    t = cfg.t_grid.points()
    res = _map(_ac_point, [(cfg, i, float(ti)) for i, ti in enumerate(t)], workers)
    return TimeTrace(t, np.clip([r[0] for r in res], 0.0, 1.0), np.array([r[1] for r in res]),
                     metadata={"scenario": cfg.name})


def analyse_trace(cfg: ScenarioConfig, trace: TimeTrace, spec=None):
    """Fit the configured number of peaks and attach absolute frequencies and ppm widths."""
    a = cfg.analysis
    spec = spec or power_spectrum(trace, a.window, a.zero_pad)
    f = spec.frequencies
    if a.fit_window_Hz is not None:
        window = tuple(a.fit_window_Hz)
    else:
        centre = f[1:][np.argmax(spec.power[1:])]
        hw = 0.2 * f[-1]
        window = (max(centre - hw, float(f[0])), min(centre + hw, float(f[-1])))
    fits = fit_peak(spec, window, a.model, a.n_peaks)
    fits = [fits] if a.n_peaks == 1 else fits
    fs = trace.sample_rate
    peaks = []
    for pf in fits:
        entry = {"center_Hz": pf.center, "center_err_Hz": pf.center_err, "fwhh_Hz": pf.fwhh,
                 "fwhh_err_Hz": pf.fwhh_err, "amplitude": pf.amplitude, "model": pf.model,
                 "resolution_limited": pf.resolution_limited}
        if a.f_guess_Hz is not None and fs:
            un = unalias(abs(pf.center), fs, a.f_guess_Hz, pf.center_err)
            entry.update({"absolute_Hz": un.frequency, "alternative_Hz": un.candidates[1],
                          "ambiguous": un.ambiguous, "fwhh_ppm": ppm(pf.fwhh, un.frequency),
                          "undersampling_ratio": undersampling_ratio(un.frequency, fs)})
        peaks.append(entry)
    summary = {"window_Hz": list(window), "record_length_s": trace.record_length,
               "fourier_limit_Hz": 0.8858929413 / trace.record_length, "peaks": peaks}
    if len(peaks) == 2 and all("absolute_Hz" in p for p in peaks):
        summary["separation_Hz"] = abs(peaks[1]["absolute_Hz"] - peaks[0]["absolute_Hz"])
    return spec, summary


# -- drift ----------------------------------------------------------------------------------

def drift_datasets(cfg: ScenarioConfig, with_drift: bool = True):
    d = cfg.drift
    t = cfg.t_grid.points()
    gamma_n = GAMMA_C13
    rng = np.random.default_rng(split_seed(cfg.master_seed, 0))
    # slow ramp from the reference field with small jitter, so each step stays inside the
    # EPR tracker's capture range
    ramp = np.linspace(0.0, d.shift_spread_Hz, d.datasets)
    jitter = 0.02 * d.shift_spread_Hz * rng.standard_normal(d.datasets)
    jitter[0] = 0.0
    shifts = (ramp + jitter) if with_drift else np.zeros(d.datasets)
    delta_b = TWO_PI * shifts / gamma_n
    sets = []
    for i in range(d.datasets):
        r = np.random.default_rng(split_seed(cfg.master_seed, i + 1))
        f = d.nuclear_frequency_Hz + shifts[i]
        p = 0.5 + d.amplitude * np.exp(-t / d.decay_time) * np.cos(TWO_PI * f * t)
        p = np.clip(p + d.noise * r.standard_normal(t.size), 0.0, 1.0)
        sets.append(TimeTrace(t, p, tags=[(0, t.size, delta_b[i])], metadata={"dataset": i}))
    return sets, delta_b


def run_drift(cfg: ScenarioConfig):
    d, a = cfg.drift, cfg.analysis
    sets, delta_b = drift_datasets(cfg)
    wall = d.dataset_interval * np.arange(d.datasets)
    tracking = TrackingConfig().with_frequency_noise(d.tracking_noise_Hz)
    model = track_epr(wall, delta_b, tracking, rng=np.random.default_rng(split_seed(cfg.master_seed, 10**6)))
    spec = drift_correct(sets, None if d.method == "none" else model, method=d.method,
                         window=a.window, zero_pad=a.zero_pad)
    ref_sets, _ = drift_datasets(cfg, with_drift=False)
    ref = drift_correct(ref_sets, None, method="none", window=a.window, zero_pad=a.zero_pad)
    fs = sets[0].sample_rate
    centre = signed_alias(d.nuclear_frequency_Hz, fs)
    window = (centre - 0.45 * fs / 2, centre + 0.45 * fs / 2)
    summary = {"signed_alias_Hz": centre, "tracking_lost": model.tracking_lost,
               "residual_nuclear_scatter_Hz": nuclear_shift_scatter(model, delta_b),
               "delta_B_uncertainty_T": float(np.std(model.delta_b - delta_b, ddof=1)),
               "method": d.method}
    for label, s in (("spectrum", spec), ("reference", ref)):
        entry = {"half_power_width_Hz": half_power_width(s, centre)}
        try:
            pf = fit_peak(s, window, a.model if a.model != "auto" else "lorentzian")
            entry.update({"center_Hz": pf.center, "fwhh_Hz": pf.fwhh, "fwhh_err_Hz": pf.fwhh_err,
                          "fwhh_ppm": ppm(pf.fwhh, d.nuclear_frequency_Hz)})
        except PeakFitError as exc:
            entry["fit_error"] = str(exc)
        summary[label] = entry
    drift_rows = ["dataset\twall_time_s\tdelta_B_true_T\tdelta_B_tracked_T"]
    for i in range(d.datasets):
        drift_rows.append(f"{i}\t{wall[i]:.6f}\t{delta_b[i]:.9e}\t{model.delta_b[i]:.9e}")
    return sets[0], spec, summary, "\n".join(drift_rows) + "\n"


# -- NMR ------------------------------------------------------------------------------------

def nmr_scenario(cfg: ScenarioConfig, decoupling: Decoupling | None = None) -> NmrScenario:
    n = cfg.nmr
    dc = n.decoupling
    dec = decoupling or Decoupling(dc.kind, dc.frequency_Hz, dc.count, dc.spacing, dc.period,
                                   dc.duration, dc.dead_time)
    hf = qsys.HyperfineParams(TWO_PI * n.a_parallel_Hz, TWO_PI * n.a_perp_Hz)
    carbon = CarbonSpin(hf, GAMMA_C13, n.initial_state)
    fieldcfg = qsys.FieldConfig(B0=n.B0, gamma_n=GAMMA_C13)
    return NmrScenario(carbon, fieldcfg, n.electron_T1, dec, n.t_max, n.memory_T1)


def run_nmr(cfg: ScenarioConfig, workers: int) -> TimeTrace:
    scn = nmr_scenario(cfg)
    xy8 = scn.sensing_params(cfg.nmr.sensing_pulses)
    return run_nmr_correlation(scn, xy8, cfg.t_grid.points(), cfg.nmr.trajectories, cfg.master_seed, workers)


def run_nmr_curve(cfg: ScenarioConfig, workers: int):
    scn = nmr_scenario(cfg, Decoupling())
    xy8 = scn.sensing_params(cfg.nmr.sensing_pulses)
    model = cfg.analysis.model if cfg.analysis.model != "auto" else "lorentzian"
    curve = linewidth_vs_decoupling(scn, cfg.nmr.curve_frequencies_Hz, xy8, cfg.t_grid.points(),
                                    cfg.nmr.trajectories, cfg.master_seed, workers, model, cfg.nmr.batches)
    rows = ["decoupling_frequency_Hz\tfwhh_Hz\tfwhh_err_Hz\tcenter_Hz"]
    for f, pf in curve.points:
        rows.append(f"{f:.3f}\t{pf.fwhh:.6f}\t{pf.fwhh_err:.6f}\t{pf.center:.6f}")
    summary = {"points": [{"decoupling_frequency_Hz": f, "fwhh_Hz": pf.fwhh, "fwhh_err_Hz": pf.fwhh_err,
                           "center_Hz": pf.center} for f, pf in curve.points]}
    return curve, "\n".join(rows) + "\n", summary


# -- readout ---------------------------------------------------------------------------------

def run_readout(cfg: ScenarioConfig):
    n_rep = cfg.protocol.readout_repeats
    params = readout_params(cfg, n_rep)
    rng = np.random.default_rng(split_seed(cfg.master_seed, 0))
    shots = max(cfg.readout.shots, 1)
    _, states_b = simulate_counts(1.0, params, shots, rng, return_states=True)
    _, states_d = simulate_counts(0.0, params, shots, rng, return_states=True)
    occ_b, occ_d = states_b.mean(axis=0), states_d.mean(axis=0)
    times = params.readout_period * np.arange(n_rep)
    rows = ["repeat_index\ttime_s\tbright_given_bright\tbright_given_dark"]
    for k in range(n_rep):
        rows.append(f"{k}\t{times[k]:.9e}\t{occ_b[k]:.9e}\t{occ_d[k]:.9e}")
    scaling = []
    for j, n in enumerate(cfg.readout.n_values):
        pn = readout_params(cfg, int(n))
        info = fisher_information(0.5, pn, cfg.readout.fisher_samples,
                                  np.random.default_rng(split_seed(cfg.master_seed, 100 + j)))
        scaling.append({"n_repeats": int(n), "fisher_information": info,
                        "stderr_per_record": 1.0 / math.sqrt(info) if info > 0 else math.inf})
    counts = simulate_counts(0.5, params, shots, rng)
    est = estimate_probability(counts, params)
    summary = {"repolarization_constant_s": params.repolarization_constant,
               "readout_period_s": params.readout_period, "p_input": 0.5,
               "p_hat": est.p_hat, "stderr": est.stderr, "scaling": scaling}
    trace = TimeTrace(times, np.clip(occ_b, 0, 1), metadata={"quantity": "bright population, bright start"})
    return trace, "\n".join(rows) + "\n", summary


# -- Rabi -------------------------------------------------------------------------------------

def rabi_probability(mode: str, angle: float, cnot_e: float = 1.0, cnot_n: float = 1.0,
                     transition: str = "mw1") -> float:
    """|0_e> population for the selective Rabi and store/retrieve calibration sequences."""
    eff = {"mw1": cnot_e, "mw2": cnot_e, "rf1": cnot_n, "rf2": cnot_n}
    rot = qsys.selective_rotation
    rho = qsys.basis_state(0, 0)

    def store(r):
        r = rot(r, "rf1", math.pi, efficiency=eff["rf1"])
        return rot(r, "mw1", math.pi, efficiency=eff["mw1"])

    def retrieve(r):
        r = rot(r, "mw1", math.pi, efficiency=eff["mw1"])
        return rot(r, "rf1", math.pi, efficiency=eff["rf1"])

    if mode == "electron":
        rho = rot(rho, transition, angle)
    elif mode == "nuclear":
        rho = rot(rho, "rf1" if transition.startswith("mw") else transition, angle)
        rho = rot(rho, "mw1", math.pi, efficiency=eff["mw1"])
    elif mode in ("store_retrieve", "clear_control", "double_rotation"):
        rho = rot(rho, "mw1", angle)
        rho = qsys.dephase_full(rho)
        if mode != "clear_control":
            rho = store(rho)
        rho = qsys.laser_reinitialize(rho)
        if mode != "clear_control":
            rho = retrieve(rho)
        if mode == "double_rotation":
            rho = rot(rho, "mw1", angle)
    else:
        raise ValueError(f"unknown Rabi mode {mode!r}")
    return float(qsys.electron_populations(rho)[0])


def run_rabi(cfg: ScenarioConfig) -> TimeTrace:
    durations = cfg.t_grid.points()
    r = cfg.rabi
    p = [rabi_probability(r.mode, TWO_PI * r.rabi_frequency_Hz * d, cfg.protocol.cnot_e,
                          cfg.protocol.cnot_n, r.transition) for d in durations]
    return TimeTrace(durations, np.clip(p, 0, 1), metadata={"quantity": "|0_e> population vs pulse duration"})


# -- bundle ----------------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump_json(obj) -> str:
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.bool_):
            return bool(o)
        raise TypeError(type(o))

    def clean(o):
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, (float, np.floating)) and not math.isfinite(o):
            return str(float(o))
        return o

    return json.dumps(clean(obj), indent=2, sort_keys=True, default=default) + "\n"


def execute_scenario(cfg: ScenarioConfig, workers: int) -> dict:
    """Run the simulation and analysis; returns {filename: text} without touching disk."""
    files = {}
    if cfg.kind == "ac":
        trace = run_ac(cfg, workers)
        spec, summary = analyse_trace(cfg, trace)
        files.update({"trace.tsv": trace_to_text(trace), "spectrum.tsv": spectrum_to_text(spec),
                      "peaks.json": _dump_json(summary)})
    elif cfg.kind == "drift":
        trace, spec, summary, drift_text = run_drift(cfg)
        files.update({"trace.tsv": trace_to_text(trace), "spectrum.tsv": spectrum_to_text(spec),
                      "peaks.json": _dump_json(summary), "drift.tsv": drift_text})
    elif cfg.kind == "nmr":
        trace = run_nmr(cfg, workers)
        spec, summary = analyse_trace(cfg, trace)
        files.update({"trace.tsv": trace_to_text(trace), "spectrum.tsv": spectrum_to_text(spec),
                      "peaks.json": _dump_json(summary)})
    elif cfg.kind == "nmr_curve":
        _, text, summary = run_nmr_curve(cfg, workers)
        files.update({"curve.tsv": text, "peaks.json": _dump_json(summary)})
    elif cfg.kind == "readout":
        trace, text, summary = run_readout(cfg)
        files.update({"trace.tsv": trace_to_text(trace), "readout.tsv": text,
                      "readout.json": _dump_json(summary)})
    elif cfg.kind == "rabi":
        files["trace.tsv"] = trace_to_text(run_rabi(cfg))
    else:
        raise ValueError(f"unknown scenario kind {cfg.kind!r}")
    return files


def run_scenario(cfg: ScenarioConfig, output_dir: str | os.PathLike | None = None,
                 workers: int | None = None) -> Path:
    """Validate, run and write the bundle; partial output is removed if anything fails."""
    report = validate(cfg)
    workers = workers or cfg.resolved_workers()
    out = Path(output_dir or cfg.output_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    started = time.time()
    try:
        files = {"config_resolved.json": _dump_json({"config": cfg.to_dict(), "derived": report})}
        files.update(execute_scenario(cfg, workers))
        for name, text in files.items():
            (tmp / name).write_text(text, encoding="utf-8")
        manifest = {
            "scenario": cfg.name, "kind": cfg.kind, "master_seed": cfg.master_seed, "workers": workers,
            "elapsed_s": round(time.time() - started, 3),
            "started_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
            "versions": {"memspec": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__},
            "files": {name: _sha256(tmp / name) for name in sorted(files)},
        }
        (tmp / "manifest.json").write_text(_dump_json(manifest), encoding="utf-8")
        if out.exists():
            shutil.rmtree(out)
        tmp.rename(out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out


def load_trace(path: str | os.PathLike) -> TimeTrace:
    return trace_from_text(Path(path).read_text(encoding="utf-8"))
