"""Correlation spectroscopy of a hyperfine-coupled 13C spin with stochastic electron flips.

Each Monte Carlo trajectory follows the electron through random longitudinal
flips (and optional decoupling pi pulses or laser repumps) during the
waiting time. Because the electron stays in a population state while the
memory holds the first measurement, the 13C evolution along a trajectory is
a single 2x2 unitary ``W`` built from the two m_S-conditional propagators.

The correlation probability of one trajectory is
``sum_{m, m'} P(m -> m') tr(K_m' W sigma_m W^dagger)``, where ``sigma_m`` are
the 13C states conditioned on the first block's electron outcome, ``K_m'``
the second block's response to the retrieved memory state and ``P`` the
memory's dark-relaxation envelope.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import math

import numpy as np

from .qsys import (FieldConfig, SpinBasis, GAMMA_C13,
                   build_hamiltonian, transition_frequencies, rotation_unitary)
from .protocol import XY8_PHASES, Xy8Params, split_seed
from .signals import CarbonSpin
from .spectra import TimeTrace, power_spectrum, fit_peak, PeakFit, PeakFitError

DEFAULT_NMR_FIELD = 0.24
DECOUPLING_KINDS = ("none", "pi_train", "repump")
PI_TRAIN_SPACINGS = ("balanced", "count", "fixed_period")


@dataclass(frozen=True)
class Decoupling:
    """Electron control applied during the waiting time.

    ``pi_train``: pi pulses on the 0 <-> -1 transition. ``balanced`` spacing
    puts an odd number ``N`` of pulses evenly in ``t`` with ``N + 1`` close to
    ``t * frequency``, so the electron spends equal time in both states;
    ``count`` spreads a fixed ``count`` evenly; ``fixed_period`` pulses every
    ``1 / frequency`` from the start of the wait.

    ``repump``: the laser resets the electron to m_S = 0 every ``period`` (or
    ``count`` evenly spaced times) for ``duration`` seconds.
    """

    kind: str = "none"
    frequency: float = 0.0
    count: int | None = None
    spacing: str = "balanced"
    period: float = 0.0
    duration: float = 0.0
    dead_time: float = 50e-9

    def __post_init__(self):
        if self.kind not in DECOUPLING_KINDS:
            raise ValueError(f"unknown decoupling kind {self.kind!r}")
        if self.kind == "pi_train":
            if self.spacing not in PI_TRAIN_SPACINGS:
                raise ValueError(f"unknown pi-train spacing {self.spacing!r}")
            if self.spacing == "count":
                if self.count is None or self.count < 0:
                    raise ValueError("count spacing needs a non-negative pulse count")
            elif not self.frequency > 0:
                raise ValueError("pi_train needs a positive decoupling frequency")
            elif 1.0 / self.frequency < self.dead_time:
                raise ValueError(f"decoupling period {1.0 / self.frequency:.3g} s shorter than the "
                                 f"pulse dead time {self.dead_time:.3g} s")
        if self.kind == "repump":
            if self.count is None and not self.period > 0:
                raise ValueError("repump needs a period or a count")
            if self.duration < 0:
                raise ValueError("repump duration must be >= 0")

    def pulse_spacing(self, t: float) -> tuple[int, float]:
        """(number of pulses, spacing) of the pi train for waiting time ``t``."""
        if self.kind != "pi_train" or t <= 0:
            return 0, max(t, 1e-300)
        if self.spacing == "fixed_period":
            s = 1.0 / self.frequency
            return int(math.floor(t / s)), s
        if self.spacing == "count":
            n = int(self.count)
        else:
            n = max(1, int(round(t * self.frequency)) - 1)
            if n % 2 == 0:
                n += 1
        return n, t / (n + 1)

    def repump_times(self, t: float) -> np.ndarray:
        if self.kind != "repump" or t <= 0:
            return np.empty(0)
        if self.count is not None:
            return t * np.arange(1, self.count + 1) / (self.count + 1)
        return self.period * np.arange(1, int(math.floor(t / self.period)) + 1)


@dataclass(frozen=True)
class NmrScenario:
    carbon: CarbonSpin = CarbonSpin()
    field: FieldConfig = FieldConfig(B0=DEFAULT_NMR_FIELD, gamma_n=GAMMA_C13)
    electron_T1: float = 1.4e-3
    decouple: Decoupling = Decoupling()
    t_max: float = 0.05
    memory_T1: float = math.inf
    flip_rate: float | None = None  # jumps per second each way; defaults to 1 / electron_T1

    def __post_init__(self):
        if not self.electron_T1 > 0:
            raise ValueError("electron_T1 must be positive")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")

    @property
    def rate(self) -> float:
        if self.flip_rate is not None:
            return self.flip_rate
        return 0.0 if math.isinf(self.electron_T1) else 1.0 / self.electron_T1

    def hamiltonian(self) -> np.ndarray:
        f = FieldConfig(self.field.B0, self.carbon.gamma_n, self.field.gamma_e,
                        self.field.zero_field_splitting)
        return build_hamiltonian(f, self.carbon.hyperfine, SpinBasis(), frame="rotating")

    def conditional_frequencies(self) -> tuple[float, float]:
        tf = transition_frequencies(self.hamiltonian())
        return tf.rf1, tf.rf2

    def sensing_params(self, n_pulses: int = 8) -> Xy8Params:
        """XY8 tuned to the mean of the two conditional 13C frequencies."""
        f0, f1 = self.conditional_frequencies()
        return Xy8Params.from_frequency(n_pulses, 0.5 * (f0 + f1))


# -- unitary building blocks ------------------------------------------------------

def _expm_herm(h: np.ndarray, dt) -> np.ndarray:
    """exp(-i h dt) for a Hermitian ``h`` and an array of durations."""
    e, v = np.linalg.eigh(h)
    dt = np.asarray(dt, dtype=float)
    ph = np.exp(-1j * np.multiply.outer(dt, e))
    return np.einsum("ij,...j,kj->...ik", v, ph, v.conj())


def _block_unitary(h4: np.ndarray, xy8: Xy8Params, close_phase: float) -> np.ndarray:
    """Full 4x4 unitary of one XY8 block with instantaneous electron pulses."""
    u_half = _expm_herm(h4, 0.5 * xy8.tau)
    u_full = _expm_herm(h4, xy8.tau)
    u = rotation_unitary("e", 0.5 * math.pi, 0.0)
    u = u_half @ u
    for k in range(xy8.N):
        u = rotation_unitary("e", math.pi, XY8_PHASES[k % 8]) @ u
        u = (u_full if k < xy8.N - 1 else u_half) @ u
    return rotation_unitary("e", 0.5 * math.pi, close_phase) @ u


@dataclass(frozen=True)
class SensingOperators:
    sigma: np.ndarray  # (2, 2, 2): 13C state given first-block electron outcome m
    response: np.ndarray  # (2, 2, 2): K_m, second-block |0_e> response for retrieved m
    h_branch: np.ndarray  # (2, 2, 2): 13C Hamiltonian for electron state m


def sensing_operators(scn: NmrScenario, xy8: Xy8Params) -> SensingOperators:
    h4 = scn.hamiltonian()
    v1 = _block_unitary(h4, xy8, -0.5 * math.pi)
    v2 = _block_unitary(h4, xy8, 0.5 * math.pi)
    if scn.carbon.initial_state == "thermal":
        rho_c = 0.5 * np.eye(2, dtype=complex)
    else:
        rho_c = np.diag([1.0, 0.0]).astype(complex)
    rho = np.kron(np.diag([1.0, 0.0]), rho_c)
    after = (v1 @ rho @ v1.conj().T).reshape(2, 2, 2, 2)
    sigma = np.stack([after[m, :, m, :] for m in range(2)])
    proj = np.kron(np.diag([1.0, 0.0]), np.eye(2))
    resp = (v2.conj().T @ proj @ v2).reshape(2, 2, 2, 2)
    response = np.stack([resp[m, :, m, :] for m in range(2)])
    hb = h4.reshape(2, 2, 2, 2)
    h_branch = np.stack([hb[m, :, m, :] for m in range(2)])
    return SensingOperators(sigma, response, h_branch)


class _Branches:
    """Conditional 13C propagators and the two-interval pulse-train blocks."""

    def __init__(self, h_branch: np.ndarray):
        self.h = h_branch
        self.eig = [np.linalg.eigh(h_branch[m]) for m in range(2)]

    def u(self, state: np.ndarray, dt: np.ndarray) -> np.ndarray:
        out = np.empty(np.shape(dt) + (2, 2), dtype=complex)
        for m in range(2):
            sel = state == m
            if np.any(sel):
                e, v = self.eig[m]
                ph = np.exp(-1j * np.multiply.outer(dt[sel], e))
                out[sel] = np.einsum("ij,nj,kj->nik", v, ph, v.conj())
        return out

    def pair_powers(self, s: float):
        """Eigen-decompositions of P_c = U_{1-c}(s) U_c(s) for c = 0, 1."""
        u0 = _expm_herm(self.h[0], s)
        u1 = _expm_herm(self.h[1], s)
        out = []
        for p in (u1 @ u0, u0 @ u1):
            lam, vec = np.linalg.eig(p)
            out.append((lam, vec, np.linalg.inv(vec)))
        return out, (u0, u1)

    @staticmethod
    def power(decomp, c: np.ndarray, q: np.ndarray) -> np.ndarray:
        out = np.empty(q.shape + (2, 2), dtype=complex)
        for cc in range(2):
            sel = c == cc
            if np.any(sel):
                lam, vec, inv = decomp[cc]
                out[sel] = np.einsum("ij,nj,jk->nik", vec, lam[None, :] ** q[sel, None], inv)
        return out


def _flip_times(rng, rate: float, t: float, m: int) -> np.ndarray:
    """Sorted flip times per trajectory, padded with ``t`` to a common length."""
    counts = rng.poisson(rate * t, size=m) if rate > 0 else np.zeros(m, dtype=int)
    k = int(counts.max()) if m else 0
    times = np.full((m, k), t)
    for i, c in enumerate(counts):
        if c:
            times[i, :c] = np.sort(rng.uniform(0.0, t, c))
    return times


def _propagate_pi_train(br: _Branches, flips: np.ndarray, t: float, n_pulses: int, s: float):
    """13C propagators for pi pulses at ``s, 2s, ..., n_pulses s`` and random flips."""
    m = flips.shape[0]
    w = np.broadcast_to(np.eye(2, dtype=complex), (m, 2, 2)).copy()
    decomp, (u0s, u1s) = br.pair_powers(s)
    us = np.stack([u0s, u1s])
    bounds = np.concatenate([np.zeros((m, 1)), flips, np.full((m, 1), t)], axis=1)
    last = n_pulses  # index of the final interval
    for j in range(bounds.shape[1] - 1):
        a, b = bounds[:, j], bounds[:, j + 1]
        parity = j % 2
        ka = np.minimum(np.floor(a / s).astype(np.int64), last)
        kb = np.minimum(np.floor(b / s).astype(np.int64), last)
        same = ka == kb
        first_len = np.where(same, b - a, (ka + 1) * s - a)
        seg = br.u((ka + parity) % 2, np.maximum(first_len, 0.0))
        n_full = np.maximum(kb - ka - 1, 0)
        q, r = n_full // 2, n_full % 2
        c = (ka + 1 + parity) % 2
        full = _Branches.power(decomp, c, q)
        extra = np.where((r == 1)[:, None, None], us[c], np.eye(2))
        tail = br.u((kb + parity) % 2, np.maximum(b - kb * s, 0.0))
        stitched = tail @ extra @ full @ seg
        seg = np.where(same[:, None, None], seg, stitched)
        w = seg @ w
    return w


def _propagate_events(br: _Branches, flips: np.ndarray, t: float, repumps: np.ndarray,
                      duration: float):
    """13C propagators with flips and laser repumps (electron forced to m_S = 0)."""
    m = flips.shape[0]
    windows = [(r, min(r + duration, t)) for r in repumps]
    if duration > 0 and windows:
        inside = np.zeros(flips.shape, dtype=bool)
        for lo, hi in windows:
            inside |= (flips >= lo) & (flips < hi)
        flips = np.where(inside, t, flips)
        flips = np.sort(flips, axis=1)
    times = np.concatenate([flips, np.broadcast_to(repumps, (m, repumps.size))], axis=1)
    kinds = np.concatenate([np.zeros(flips.shape, dtype=np.int8),
                            np.ones((m, repumps.size), dtype=np.int8)], axis=1)
    order = np.argsort(times, axis=1, kind="stable")
    times = np.take_along_axis(times, order, axis=1)
    kinds = np.take_along_axis(kinds, order, axis=1)
    w = np.broadcast_to(np.eye(2, dtype=complex), (m, 2, 2)).copy()
    state = np.zeros(m, dtype=np.int64)
    prev = np.zeros(m)
    for j in range(times.shape[1]):
        w = br.u(state, times[:, j] - prev) @ w
        prev = times[:, j]
        state = np.where(kinds[:, j] == 1, 0, 1 - state)
    return br.u(state, t - prev) @ w


def _memory_mixing(t: float, memory_T1: float) -> np.ndarray:
    keep = 0.5 * (1.0 + math.exp(-t / memory_T1)) if math.isfinite(memory_T1) else 1.0
    return np.array([[keep, 1 - keep], [1 - keep, keep]])


def nmr_point(scn: NmrScenario, xy8: Xy8Params, t: float, m_traj: int, seed) -> tuple[float, float]:
    """Mean correlation probability and its standard error at one waiting time."""
    rng = np.random.default_rng(seed)
    ops = sensing_operators(scn, xy8)
    br = _Branches(ops.h_branch)
    flips = _flip_times(rng, scn.rate, t, m_traj)
    if scn.decouple.kind == "repump":
        w = _propagate_events(br, flips, t, scn.decouple.repump_times(t), scn.decouple.duration)
    else:
        n, s = scn.decouple.pulse_spacing(t)
        w = _propagate_pi_train(br, flips, t, n, s)
    mix = _memory_mixing(t, scn.memory_T1)
    p = np.zeros(m_traj)
    for mm in range(2):
        evolved = w @ ops.sigma[mm] @ np.conj(np.swapaxes(w, -1, -2))
        for m2 in range(2):
            if mix[mm, m2]:
                p += mix[mm, m2] * np.real(np.einsum("ij,nji->n", ops.response[m2], evolved))
    mean = float(np.mean(p))
    err = float(np.std(p, ddof=1) / math.sqrt(m_traj)) if m_traj > 1 else math.inf
    return mean, err


def _point_task(args):
    scn, xy8, t, m_traj, seed = args
    return nmr_point(scn, xy8, t, m_traj, seed)


def run_nmr_correlation(scn: NmrScenario, xy8: Xy8Params, t_grid, m_trajectories: int,
                        rng_seed: int = 0, workers: int = 1) -> TimeTrace:
    """Trace of p(t); every grid point draws from its own seed so results ignore ``workers``."""
    t_grid = np.asarray(t_grid, dtype=float)
    if m_trajectories < 1:
        raise ValueError("need at least one trajectory")
    if t_grid.size > 1 and np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be increasing")
    if t_grid.size and t_grid[-1] > scn.t_max:
        raise ValueError(f"waiting time {t_grid[-1]} s exceeds t_max {scn.t_max} s")
    tasks = [(scn, xy8, float(t), m_trajectories, split_seed(rng_seed, i)) for i, t in enumerate(t_grid)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_point_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        results = [_point_task(a) for a in tasks]
    p = np.clip([r[0] for r in results], 0.0, 1.0)
    err = np.array([r[1] for r in results])
    return TimeTrace(t_grid, p, err, metadata={"M": m_trajectories, "seed": rng_seed})


@dataclass
class LinewidthCurve:
    points: list = field(default_factory=list)  # (decoupling frequency Hz, PeakFit)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([f for f, _ in self.points])

    @property
    def widths(self) -> np.ndarray:
        return np.array([p.fwhh for _, p in self.points])

    @property
    def errors(self) -> np.ndarray:
        return np.array([p.fwhh_err for _, p in self.points])


def fit_nmr_line(trace: TimeTrace, model: str = "lorentzian", half_window: float | None = None) -> PeakFit:
    """Fit the strongest line of the trace's power spectrum."""
    spec = power_spectrum(trace)
    f, p = spec.frequencies, spec.power
    centre = f[1:][np.argmax(p[1:])]
    hw = half_window or 0.2 * f[-1]
    return fit_peak(spec, (max(centre - hw, 0.0), min(centre + hw, f[-1])), model)


def linewidth_vs_decoupling(template: NmrScenario, frequencies, xy8: Xy8Params, t_grid,
                            m_trajectories: int, rng_seed: int = 0, workers: int = 1,
                            model: str = "lorentzian", n_batches: int = 8) -> LinewidthCurve:
    """Fitted 13C line width for each decoupling frequency (balanced pi trains).

    The trajectories are split into ``n_batches`` independent batches; the
    width comes from the pooled trace and its error from the scatter of the
    per-batch widths (fit covariances on zero-padded spectra are too optimistic).
    """
    curve = LinewidthCurve()
    per_batch = max(1, m_trajectories // n_batches)
    for i, fdd in enumerate(frequencies):
        dec = Decoupling("pi_train", frequency=float(fdd), dead_time=template.decouple.dead_time)
        scn = replace(template, decouple=dec)
        traces = []
        for b in range(n_batches):
            seed = int(split_seed(rng_seed, 10_000 * (i + 1) + b).generate_state(1)[0])
            traces.append(run_nmr_correlation(scn, xy8, t_grid, per_batch, seed, workers))
        pooled = TimeTrace(traces[0].t, np.mean([tr.p for tr in traces], axis=0),
                           np.sqrt(np.sum([tr.stderr ** 2 for tr in traces], axis=0)) / n_batches)
        try:
            fit = fit_nmr_line(pooled, model)
            widths = [fit_nmr_line(tr, model).fwhh for tr in traces] if n_batches > 1 else []
        except PeakFitError as exc:
            raise PeakFitError(f"fit failed at decoupling frequency {fdd} Hz: {exc}") from exc
        err = float(np.std(widths, ddof=1) / math.sqrt(n_batches)) if len(widths) > 1 else fit.fwhh_err
        curve.points.append((float(fdd), replace(fit, fwhh_err=err)))
    return curve
