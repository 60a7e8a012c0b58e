"""Undersampled power spectra, alias bookkeeping, field-drift tracking and peak fitting."""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import io
import math
import warnings

import numpy as np
from scipy import optimize

from .qsys import GAMMA_E, GAMMA_C13

TWO_PI = 2.0 * math.pi
SINC_HALF_POWER = 0.8858929413  # FWHH of sinc^2(x) in units where the first zero is at 1
MIN_SAMPLES = 8


class SpectrumError(ValueError):
    pass


class PeakFitError(RuntimeError):
    pass


# -- containers ---------------------------------------------------------------

@dataclass
class TimeTrace:
    """Sampled correlation probability.

    ``tags`` are ``(start_index, stop_index, delta_B)`` triples, half-open in
    sample index, giving the field offset that applied while those samples
    were taken.
    """

    t: np.ndarray
    p: np.ndarray
    stderr: np.ndarray | None = None
    tags: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.stderr is not None:
            self.stderr = np.asarray(self.stderr, dtype=float)
        if self.t.shape != self.p.shape or self.t.ndim != 1:
            raise SpectrumError("t and p must be 1-d arrays of equal length")
        if self.t.size > 1 and np.any(np.diff(self.t) <= 0):
            raise SpectrumError("t must be strictly increasing")
        if np.any((self.p < 0) | (self.p > 1)):
            raise SpectrumError("p values must lie in [0, 1]")
        self.tags = [(int(a), int(b), float(db)) for a, b, db in self.tags]

    @property
    def n(self) -> int:
        return self.t.size

    @property
    def dt(self) -> float:
        return float(np.mean(np.diff(self.t)))

    @property
    def sample_rate(self) -> float | None:
        if self.n < 2 or not self.is_uniform():
            return None
        return 1.0 / self.dt

    @property
    def record_length(self) -> float:
        return self.n * self.dt

    def is_uniform(self, rtol: float = 1e-6) -> bool:
        d = np.diff(self.t)
        return bool(np.all(np.abs(d - d.mean()) <= rtol * d.mean()))

    def resampled(self) -> "TimeTrace":
        grid = np.linspace(self.t[0], self.t[-1], self.n)
        return TimeTrace(grid, np.interp(grid, self.t, self.p), None, self.tags, dict(self.metadata))

    def delta_b_per_sample(self) -> np.ndarray:
        db = np.full(self.n, np.nan)
        for a, b, v in self.tags:
            db[a:b] = v
        if np.any(np.isnan(db)):
            raise SpectrumError("some samples are not covered by a drift tag")
        return db


@dataclass
class PowerSpectrum:
    frequencies: np.ndarray
    power: np.ndarray
    window: str = "rect"
    record_length: float = 0.0
    zero_pad: int = 1
    two_sided: bool = False

    @property
    def resolution(self) -> float:
        return 1.0 / self.record_length if self.record_length else float("nan")

    @property
    def bin_width(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])


@dataclass(frozen=True)
class PeakFit:
    center: float
    center_err: float
    fwhh: float
    fwhh_err: float
    amplitude: float
    offset: float
    model: str
    resolution_limited: bool = False


# -- spectra ----------------------------------------------------------------------

def _window(name: str, n: int) -> np.ndarray:
    if name in ("rect", "rectangular", "none"):
        return np.ones(n)
    if name == "hann":
        return np.hanning(n)
    raise SpectrumError(f"unknown window {name!r}")


def _prepare(trace: TimeTrace, resample: bool) -> TimeTrace:
    if trace.n < MIN_SAMPLES:
        raise SpectrumError(f"need at least {MIN_SAMPLES} samples, got {trace.n}")
    if not trace.is_uniform():
        if not resample:
            raise SpectrumError("non-uniform sampling; pass resample=True to interpolate")
        trace = trace.resampled()
    return trace


def power_spectrum(trace: TimeTrace, window: str = "rect", zero_pad: int = 4,
                   resample: bool = False) -> PowerSpectrum:
    """One-sided power spectrum of the mean-subtracted trace.

    Normalised so that ``power.sum()`` equals the windowed time-domain energy
    ``sum((x * w)**2)`` (Parseval), independent of ``zero_pad``.
    """
    trace = _prepare(trace, resample)
    x = (trace.p - trace.p.mean()) * _window(window, trace.n)
    L = trace.n * int(zero_pad)
    spec = np.abs(np.fft.rfft(x, L)) ** 2 / L
    if L % 2 == 0:
        spec[1:-1] *= 2.0
    else:
        spec[1:] *= 2.0
    freqs = np.fft.rfftfreq(L, trace.dt)
    return PowerSpectrum(freqs, spec, window, trace.record_length, int(zero_pad))


def two_sided_spectrum(trace: TimeTrace, delta_omega=None, window: str = "rect",
                       zero_pad: int = 4) -> PowerSpectrum:
    """Two-sided power spectrum of ``(p - mean) * exp(-i delta_omega t)``.

    ``delta_omega`` may be a scalar or one value per sample (rad/s).
    """
    trace = _prepare(trace, False)
    x = (trace.p - trace.p.mean()) * _window(window, trace.n)
    if delta_omega is not None:
        x = x * np.exp(-1j * np.asarray(delta_omega) * trace.t)
    L = trace.n * int(zero_pad)
    spec = np.fft.fftshift(np.abs(np.fft.fft(x, L)) ** 2 / L)
    freqs = np.fft.fftshift(np.fft.fftfreq(L, trace.dt))
    return PowerSpectrum(freqs, spec, window, trace.record_length, int(zero_pad), two_sided=True)


def half_power_width(spec: PowerSpectrum, center_guess: float | None = None) -> float:
    """FWHH of the peak nearest ``center_guess`` by linear interpolation of the half-power crossings."""
    f, p = spec.frequencies, spec.power
    i = int(np.argmax(p)) if center_guess is None else int(np.argmin(np.abs(f - center_guess)))
    while 0 < i < p.size - 1 and (p[i - 1] > p[i] or p[i + 1] > p[i]):
        i += 1 if p[i + 1] > p[i] else -1
    half = 0.5 * p[i]
    lo = i
    while lo > 0 and p[lo] > half:
        lo -= 1
    hi = i
    while hi < p.size - 1 and p[hi] > half:
        hi += 1
    f_lo = np.interp(half, [p[lo], p[lo + 1]], [f[lo], f[lo + 1]])
    f_hi = np.interp(half, [p[hi], p[hi - 1]], [f[hi], f[hi - 1]])
    return float(f_hi - f_lo)


def alias_frequency(f_true, f_s: float):
    """Fold ``f_true`` into [0, f_s/2]."""
    if not f_s > 0:
        raise ValueError("f_s must be positive")
    f_true = np.asarray(f_true, dtype=float)
    out = np.abs(f_true - np.round(f_true / f_s) * f_s)
    return float(out) if out.ndim == 0 else out


def signed_alias(f_true, f_s: float):
    """Alias in [-f_s/2, f_s/2], keeping the sign that a frequency shift moves with."""
    f_true = np.asarray(f_true, dtype=float)
    out = f_true - np.round(f_true / f_s) * f_s
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class UnaliasResult:
    frequency: float
    candidates: tuple
    separation: float
    ambiguous: bool


def unalias(f_baseband: float, f_s: float, f_guess: float, stderr: float = 0.0,
            band: tuple = (0.0, math.inf)) -> UnaliasResult:
    """Absolute frequency among ``k f_s +- f_baseband`` nearest ``f_guess``.

    The two nearest candidates and their separation are reported; when the
    separation is within ``stderr`` the result is flagged ambiguous.
    """
    if not f_s > 0:
        raise ValueError("f_s must be positive")
    if not band[0] <= f_guess <= band[1]:
        raise ValueError(f"f_guess {f_guess} outside the configured band {band}")
    k = math.floor(f_guess / f_s)
    cands = sorted({abs(kk * f_s + s * f_baseband) for kk in (k - 1, k, k + 1, k + 2) for s in (1, -1)},
                   key=lambda c: abs(c - f_guess))
    best, second = cands[0], cands[1]
    sep = abs(second - best)
    return UnaliasResult(best, (best, second), sep, sep <= stderr)


def undersampling_ratio(f_true: float, f_s: float) -> float:
    return f_true / f_s


def ppm(fwhh: float, frequency: float) -> float:
    return 1e6 * fwhh / frequency


# -- peak fitting -------------------------------------------------------------------

def lorentzian(f, center, fwhh, amplitude):
    return amplitude / (1.0 + (2.0 * (f - center) / fwhh) ** 2)


def gaussian(f, center, fwhh, amplitude):
    return amplitude * np.exp(-4.0 * math.log(2.0) * ((f - center) / fwhh) ** 2)


def sinc_sq(f, center, fwhh, amplitude):
    return amplitude * np.sinc(SINC_HALF_POWER * (f - center) / fwhh) ** 2


PEAK_MODELS = {"lorentzian": lorentzian, "gaussian": gaussian, "sinc_sq": sinc_sq}


def _local_maxima(p: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero((p[1:-1] >= p[:-2]) & (p[1:-1] > p[2:])) + 1
    return idx[np.argsort(p[idx])[::-1]]


def _fit(f, p, model: str, n_peaks: int, seeds: list):
    shape = PEAK_MODELS[model]

    def total(x, *theta):
        out = np.full_like(x, theta[-1])
        for j in range(n_peaks):
            out = out + shape(x, *theta[3 * j:3 * j + 3])
        return out

    p0, lo, hi = [], [], []
    span = f[-1] - f[0]
    step = f[1] - f[0]
    for c, w, a in seeds:
        p0 += [c, w, a]
        lo += [f[0], step * 1e-3, 0.0]
        hi += [f[-1], 4 * span, np.inf]
    p0.append(max(float(np.min(p)), 0.0))
    lo.append(-np.inf)
    hi.append(np.inf)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", optimize.OptimizeWarning)
        try:
            popt, pcov = optimize.curve_fit(total, f, p, p0=p0, bounds=(lo, hi), maxfev=20000)
        except (RuntimeError, ValueError) as exc:
            raise PeakFitError(f"{model} fit did not converge: {exc}") from exc
    resid = float(np.sum((total(f, *popt) - p) ** 2))
    return popt, pcov, resid


def _seeds(f, p, n_peaks: int):
    order = _local_maxima(p)
    if order.size < n_peaks:
        raise PeakFitError(f"window holds {order.size} local maxima, {n_peaks} requested")
    seeds = []
    base = float(np.min(p))
    for i in sorted(order[:n_peaks]):
        half = base + 0.5 * (p[i] - base)
        lo = i
        while lo > 0 and p[lo] > half:
            lo -= 1
        hi = i
        while hi < p.size - 1 and p[hi] > half:
            hi += 1
        width = max(f[hi] - f[lo], 2 * (f[1] - f[0]))
        if n_peaks > 1:
            width = min(width, (f[-1] - f[0]) / n_peaks)
        seeds.append((float(f[i]), float(width), float(p[i] - base)))
    return seeds


def fit_peak(spec: PowerSpectrum, window: tuple | None = None, model: str = "lorentzian",
             n_peaks: int = 1):
    """Least-squares peak fit inside ``window`` (Hz range).

    Returns a :class:`PeakFit` for ``n_peaks == 1`` and a list sorted by centre
    otherwise. ``model="auto"`` picks ``sinc_sq`` when the Lorentzian width is
    consistent with the record-length limit and ``lorentzian`` otherwise.
    """
    f, p = spec.frequencies, spec.power
    if window is not None:
        sel = (f >= window[0]) & (f <= window[1])
        f, p = f[sel], p[sel]
    if f.size < 3 * n_peaks + 2:
        raise PeakFitError("fit window holds too few spectral points")
    if model == "auto":
        fits = fit_peak(PowerSpectrum(f, p, spec.window, spec.record_length, spec.zero_pad,
                                      spec.two_sided), None, "lorentzian", n_peaks)
        widths = [fits.fwhh] if n_peaks == 1 else [x.fwhh for x in fits]
        limit = SINC_HALF_POWER / spec.record_length if spec.record_length else 0.0
        # a Lorentzian barely wider than the record limit means the window, not decay, sets the shape
        if spec.record_length and min(widths) < 1.5 * limit:
            model = "sinc_sq"
        else:
            return fits
    if model not in PEAK_MODELS:
        raise ValueError(f"unknown peak model {model!r}")
    seeds = _seeds(f, p, n_peaks)
    popt, pcov, _ = _fit(f, p, model, n_peaks, seeds)
    errs = np.sqrt(np.abs(np.diag(pcov))) if np.all(np.isfinite(pcov)) else np.full(popt.size, np.inf)
    out = []
    step = f[1] - f[0]
    for j in range(n_peaks):
        c, w, a = popt[3 * j:3 * j + 3]
        if not w > 0 or not f[0] <= c <= f[-1]:
            raise PeakFitError("fitted peak outside the window or with non-positive width")
        pinned = bool(w <= 2.0 * step or (spec.record_length and w < 0.5 / spec.record_length))
        out.append(PeakFit(float(c), float(errs[3 * j]), float(w), float(errs[3 * j + 1]),
                           float(a), float(popt[-1]), model, pinned))
    out.sort(key=lambda pf: pf.center)
    return out[0] if n_peaks == 1 else out


# -- drift tracking ---------------------------------------------------------------------

@dataclass(frozen=True)
class TrackingConfig:
    """Four-point measurement of one hyperfine-resolved electron line.

    The line is a Lorentzian fluorescence dip of full width ``linewidth`` (Hz)
    and fractional ``contrast``. Points sit at +-``inner`` and +-``outer``
    detuning from the current reference; each point carries Gaussian noise of
    ``point_noise`` (fraction of the off-resonant level).
    """

    linewidth: float = 1.0e6
    contrast: float = 0.2
    inner: float = 0.25e6
    outer: float = 0.5e6
    point_noise: float = 0.0
    capture_range: float = 1.0e6
    iterations: int = 5  # re-centre and re-measure this many times per step

    def __post_init__(self):
        if not 0 < self.inner < self.outer:
            raise ValueError("need 0 < inner < outer detuning")

    def _dip(self, delta):
        return 1.0 - self.contrast / (1.0 + (2.0 * np.asarray(delta) / self.linewidth) ** 2)

    def slope(self) -> float:
        """Fluorescence slope at the inner detuning (per Hz) for a centred line."""
        h = 1e-3 * self.inner
        return float((self._dip(self.inner + h) - self._dip(self.inner - h)) / (2 * h))

    def with_frequency_noise(self, sigma_step_diff: float) -> "TrackingConfig":
        """Point noise giving a point-to-point std ``sigma_step_diff`` (Hz) of the tracked frequency."""
        sigma_est = sigma_step_diff / math.sqrt(2.0)
        noise = sigma_est * math.sqrt(2.0) * abs(self.slope())
        return TrackingConfig(self.linewidth, self.contrast, self.inner, self.outer, noise,
                              self.capture_range, self.iterations)


@dataclass
class DriftModel:
    epr_reference: float  # Hz
    times: np.ndarray
    omega_e: np.ndarray  # Hz, tracked line position
    gamma_e: float = GAMMA_E
    gamma_n: float = GAMMA_C13
    lost: np.ndarray | None = None

    @property
    def delta_b(self) -> np.ndarray:
        return TWO_PI * (np.asarray(self.omega_e) - self.epr_reference) / self.gamma_e

    @property
    def delta_omega(self) -> np.ndarray:
        """Nuclear angular-frequency shift per sample (rad/s)."""
        return self.gamma_n * self.delta_b

    @property
    def tracking_lost(self) -> bool:
        return bool(self.lost is not None and np.any(self.lost))


def track_epr(times, delta_b_true, cfg: TrackingConfig = TrackingConfig(),
              epr_reference: float = 0.0, rng=None, gamma_e: float = GAMMA_E,
              gamma_n: float = GAMMA_C13) -> DriftModel:
    """Follow the electron line through a field-drift profile with a slope lock.

    ``delta_b_true`` is either an array matching ``times`` or a callable of
    time. Each step probes the dip at +-``inner`` around the current estimate
    and converts the fluorescence difference to a frequency offset using the
    calibrated line slope, re-centring ``cfg.iterations`` times. A step whose
    line has moved beyond ``capture_range``, or whose last correction exceeds
    ``outer``, is flagged as lost and keeps the previous estimate.
    """
    rng = np.random.default_rng(rng)
    times = np.asarray(times, dtype=float)
    db = np.asarray(delta_b_true(times) if callable(delta_b_true) else delta_b_true, dtype=float)
    line = epr_reference + gamma_e * db / TWO_PI
    est = np.empty_like(line)
    lost = np.zeros(line.size, dtype=bool)
    ref = epr_reference
    pts = np.array([-cfg.inner, cfg.inner])
    slope = cfg.slope()
    for k, true in enumerate(line):
        guess, step = ref, 0.0
        if abs(true - ref) <= cfg.capture_range:
            for _ in range(max(1, cfg.iterations)):
                f = cfg._dip(pts - (true - guess)) + cfg.point_noise * rng.standard_normal(2)
                step = (f[0] - f[1]) / (2.0 * slope)
                guess += step
        if abs(true - ref) > cfg.capture_range or abs(step) > cfg.outer:
            lost[k] = True
            guess = ref
        est[k] = guess
        ref = guess
    return DriftModel(epr_reference, times, est, gamma_e, gamma_n, lost)


def nuclear_shift_scatter(model: DriftModel, delta_b_true) -> float:
    """Std (Hz) of point-to-point differences of the nuclear-frequency correction error."""
    err = model.gamma_n * (model.delta_b - np.asarray(delta_b_true)) / TWO_PI
    return float(np.std(np.diff(err), ddof=1))


# -- drift correction -------------------------------------------------------------------

def _fsum_average(arrays: list) -> np.ndarray:
    stack = np.stack(arrays)
    return np.array([math.fsum(col) for col in stack.T]) / len(arrays)


def drift_correct(datasets: list, model: DriftModel | None = None, method: str = "demodulate",
                  window: str = "rect", zero_pad: int = 4, gamma_n: float = GAMMA_C13) -> PowerSpectrum:
    """Average the two-sided spectra of several datasets after removing field drift.

    Each dataset's tags give the field offset per sample. ``demodulate``
    multiplies samples by ``exp(-i gamma_n dB t)``; ``shift`` translates each
    dataset's spectrum by ``-gamma_n dB / 2 pi`` (one tag per dataset).
    ``model`` overrides tag values with ``model.delta_b[i]`` for dataset ``i``.
    """
    if not datasets:
        raise SpectrumError("no datasets")
    spectra = []
    ref = None
    for i, tr in enumerate(datasets):
        if model is not None:
            db = np.full(tr.n, float(model.delta_b[i]))
        else:
            if not tr.tags:
                raise SpectrumError(f"dataset {i} carries no drift tags")
            db = tr.delta_b_per_sample()
        dw = gamma_n * db
        if method == "demodulate":
            s = two_sided_spectrum(tr, dw, window, zero_pad)
        elif method == "shift":
            if not np.allclose(db, db[0], rtol=0, atol=1e-18):
                raise SpectrumError("spectrum-shift path needs one field offset per dataset")
            s = two_sided_spectrum(tr, None, window, zero_pad)
            shift = dw[0] / TWO_PI
            s = PowerSpectrum(s.frequencies, np.interp(s.frequencies + shift, s.frequencies, s.power,
                                                       left=0.0, right=0.0),
                              s.window, s.record_length, s.zero_pad, True)
        elif method == "none":
            s = two_sided_spectrum(tr, None, window, zero_pad)
        else:
            raise ValueError(f"unknown drift-correction method {method!r}")
        if ref is None:
            ref = s
        elif s.frequencies.shape != ref.frequencies.shape or not np.allclose(s.frequencies, ref.frequencies):
            raise SpectrumError("datasets must share the same sampling grid")
        spectra.append(s.power)
    return PowerSpectrum(ref.frequencies, _fsum_average(spectra), ref.window, ref.record_length,
                         ref.zero_pad, True)


def average_spectra(spectra: list) -> PowerSpectrum:
    ref = spectra[0]
    return PowerSpectrum(ref.frequencies, _fsum_average([s.power for s in spectra]), ref.window,
                         ref.record_length, ref.zero_pad, ref.two_sided)


# -- file formats -------------------------------------------------------------------------

def trace_to_text(trace: TimeTrace) -> str:
    """Tab-separated ``t_s  p  stderr`` with a one-line JSON metadata header."""
    meta = dict(trace.metadata)
    meta.update({"sample_rate_Hz": trace.sample_rate, "tags": trace.tags,
                 "units": {"t": "s", "p": "probability", "stderr": "probability"}})
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    buf.write("t_s\tp\tstderr\n")
    err = trace.stderr if trace.stderr is not None else np.full(trace.n, np.nan)
    for t, p, e in zip(trace.t, trace.p, err):
        buf.write(f"{t:.12e}\t{p:.12e}\t{e:.6e}\n")
    return buf.getvalue()


def trace_from_text(text: str) -> TimeTrace:
    lines = text.splitlines()
    meta = json.loads(lines[0][2:]) if lines and lines[0].startswith("# ") else {}
    body = [ln for ln in lines if ln and not ln.startswith("#")][1:]
    data = np.array([[float(x) for x in ln.split("\t")] for ln in body]).reshape(-1, 3)
    err = None if np.all(np.isnan(data[:, 2])) else data[:, 2]
    tags = meta.pop("tags", [])
    for k in ("sample_rate_Hz", "units"):
        meta.pop(k, None)
    return TimeTrace(data[:, 0], data[:, 1], err, tags, meta)


def spectrum_to_text(spec: PowerSpectrum) -> str:
    buf = io.StringIO()
    buf.write("# " + json.dumps({"window": spec.window, "record_length_s": spec.record_length,
                                 "zero_pad": spec.zero_pad, "two_sided": spec.two_sided}) + "\n")
    buf.write("frequency_Hz\tpower\n")
    for f, p in zip(spec.frequencies, spec.power):
        buf.write(f"{f:.9f}\t{p:.12e}\n")
    return buf.getvalue()
