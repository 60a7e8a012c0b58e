"""Photon statistics of repetitive memory readout and probability estimation.

The memory is modelled as a classical two-state chain: *bright* (the nuclear
state that the single c-NOT retrieve maps onto ``|0_e>``) and *dark*. Each
repeat draws a Poisson photon count with a state-dependent mean. Between
repeats the laser pumps the memory toward a steady state, which it reaches
with probability ``1 - exp(-period / repolarization_constant)`` per repeat.
"""

from __future__ import annotations

from dataclasses import dataclass
import io
import math

import numpy as np
from scipy import optimize, stats


class DegenerateReadoutError(ValueError):
    """Bright and dark photon yields are equal, so nothing can be inferred."""


@dataclass(frozen=True)
class ReadoutParams:
    photons_bright: float = 0.03
    photons_dark: float = 0.02
    n_repeats: int = 1000
    repolarization_constant: float = 1.2e-3
    readout_period: float = 1.0e-6
    pumped_bright: float = 0.0  # bright population of the laser-pumped steady state

    def __post_init__(self):
        if self.photons_dark < 0 or self.photons_bright < 0:
            raise ValueError("photon yields must be >= 0")
        if self.n_repeats < 1:
            raise ValueError("n_repeats must be >= 1")
        if not self.repolarization_constant > 0 or self.readout_period < 0:
            raise ValueError("repolarization_constant must be > 0 and readout_period >= 0")
        if not 0.0 <= self.pumped_bright <= 1.0:
            raise ValueError("pumped_bright must be in [0, 1]")

    @property
    def reset_probability(self) -> float:
        """Chance per repeat that the memory is pumped back to its steady state."""
        return -math.expm1(-self.readout_period / self.repolarization_constant)

    def swapped(self) -> "ReadoutParams":
        """Same physics with the bright/dark labels exchanged."""
        return ReadoutParams(self.photons_dark, self.photons_bright, self.n_repeats,
                             self.repolarization_constant, self.readout_period,
                             1.0 - self.pumped_bright)

    def check_estimable(self) -> None:
        if self.photons_bright == self.photons_dark:
            raise DegenerateReadoutError("photons_bright equals photons_dark; p cannot be estimated")


@dataclass
class ShotRecord:
    counts: np.ndarray
    states: np.ndarray | None = None  # True = bright, per repeat

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or np.any(self.counts < 0):
            raise ValueError("counts must be a 1-d array of non-negative integers")

    @property
    def n_repeats(self) -> int:
        return self.counts.size

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write("repeat_index\tcount\n")
        for i, c in enumerate(self.counts):
            buf.write(f"{i}\t{int(c)}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "ShotRecord":
        rows = np.loadtxt(io.StringIO(text), skiprows=1, dtype=np.int64, ndmin=2)
        order = np.argsort(rows[:, 0])
        return cls(rows[order, 1])


def simulate_counts(p_bright, params: ReadoutParams, shots: int, rng=None,
                    return_states: bool = False):
    """Photon counts of shape ``(shots, n_repeats)`` for memories bright with probability ``p_bright``."""
    rng = np.random.default_rng(rng)
    p_bright = float(p_bright)
    if not 0.0 <= p_bright <= 1.0:
        raise ValueError("p_bright must be in [0, 1]")
    lam = np.array([params.photons_dark, params.photons_bright])
    state = rng.random(shots) < p_bright
    counts = np.empty((shots, params.n_repeats), dtype=np.int64)
    states = np.empty((shots, params.n_repeats), dtype=bool) if return_states else None
    q = params.reset_probability
    for k in range(params.n_repeats):
        counts[:, k] = rng.poisson(lam[state.astype(np.intp)])
        if return_states:
            states[:, k] = state
        if q > 0:
            reset = rng.random(shots) < q
            state = np.where(reset, rng.random(shots) < params.pumped_bright, state)
    return (counts, states) if return_states else counts


def repetitive_readout(p_bright: float, params: ReadoutParams, rng=None) -> ShotRecord:
    counts, states = simulate_counts(p_bright, params, 1, rng, return_states=True)
    return ShotRecord(counts[0], states[0])


def _as_counts(records) -> np.ndarray:
    if isinstance(records, np.ndarray):
        counts = records
    else:
        records = list(records)
        if not records:
            raise ValueError("need at least one record")
        counts = np.stack([r.counts if isinstance(r, ShotRecord) else np.asarray(r) for r in records])
    counts = np.atleast_2d(np.asarray(counts, dtype=np.int64))
    if counts.shape[0] == 0:
        raise ValueError("need at least one record")
    return counts


def start_log_likelihoods(counts: np.ndarray, params: ReadoutParams) -> np.ndarray:
    """log P(counts | memory starts bright / dark), shape ``(records, 2)`` (bright first).

    Forward algorithm over the two-state chain with per-step normalisation.
    """
    counts = _as_counts(counts)
    n_rec, n_rep = counts.shape
    log_em = np.stack([stats.poisson.logpmf(counts, params.photons_bright),
                       stats.poisson.logpmf(counts, params.photons_dark)], axis=-1)
    q = params.reset_probability
    pumped = np.array([params.pumped_bright, 1.0 - params.pumped_bright])
    # alpha[r, s, j]: start s, current state j
    alpha = np.broadcast_to(np.eye(2), (n_rec, 2, 2)).copy()
    log_scale = np.zeros((n_rec, 2))
    with np.errstate(divide="ignore"):
        for k in range(n_rep):
            em = log_em[:, k, :]
            shift = np.max(np.where(np.isfinite(em), em, -np.inf), axis=-1, keepdims=True)
            shift = np.where(np.isfinite(shift), shift, 0.0)
            alpha = alpha * np.exp(em - shift)[:, None, :]
            log_scale += shift
            norm = alpha.sum(axis=-1)
            safe = np.where(norm > 0, norm, 1.0)
            alpha = alpha / safe[..., None]
            log_scale += np.where(norm > 0, np.log(safe), -np.inf)
            if q > 0 and k + 1 < n_rep:
                alpha = (1 - q) * alpha + q * alpha.sum(axis=-1, keepdims=True) * pumped
    return log_scale


def _mixture_terms(loglik: np.ndarray):
    m = np.max(loglik, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    w = np.exp(loglik - m)
    return w[:, 0], w[:, 1]


@dataclass(frozen=True)
class Estimate:
    p_hat: float
    stderr: float
    n_records: int


def estimate_probability(records, params: ReadoutParams) -> Estimate:
    """Maximum-likelihood estimate of the bright probability with a Fisher-information stderr."""
    params.check_estimable()
    counts = _as_counts(records)
    wb, wd = _mixture_terms(start_log_likelihoods(counts, params))

    def nll(p):
        return -np.sum(np.log(np.maximum(p * wb + (1 - p) * wd, 1e-300)))

    res = optimize.minimize_scalar(nll, bounds=(0.0, 1.0), method="bounded",
                                   options={"xatol": 1e-10})
    p_hat = float(res.x)
    # the bounded search never lands exactly on an edge; check the edges explicitly
    for edge in (0.0, 1.0):
        if nll(edge) <= nll(p_hat):
            p_hat = edge
    info = np.sum((wb - wd) ** 2 / np.maximum(p_hat * wb + (1 - p_hat) * wd, 1e-300) ** 2)
    stderr = float(1.0 / math.sqrt(info)) if info > 0 else math.inf
    return Estimate(p_hat, stderr, counts.shape[0])


def fisher_information(p: float, params: ReadoutParams, n_mc: int = 20000, rng=None) -> float:
    """Expected Fisher information about ``p`` carried by one record.

    Exact when the memory never repolarises (total counts are then
    sufficient); Monte Carlo over simulated records otherwise.
    """
    params.check_estimable()
    if params.reset_probability == 0.0:
        n = params.n_repeats
        mb, md = n * params.photons_bright, n * params.photons_dark
        hi = int(stats.poisson.ppf(1 - 1e-16, max(mb, md))) + 20
        c = np.arange(hi + 1)
        pb, pd = stats.poisson.pmf(c, mb), stats.poisson.pmf(c, md)
        mix = p * pb + (1 - p) * pd
        ok = mix > 0
        return float(np.sum((pb[ok] - pd[ok]) ** 2 / mix[ok]))
    counts = simulate_counts(p, params, n_mc, rng)
    wb, wd = _mixture_terms(start_log_likelihoods(counts, params))
    return float(np.mean((wb - wd) ** 2 / np.maximum(p * wb + (1 - p) * wd, 1e-300) ** 2))


def distinguishability(params: ReadoutParams) -> np.ndarray:
    """Bright-population difference between the two starting states at every repeat."""
    return (1.0 - params.reset_probability) ** np.arange(params.n_repeats)
