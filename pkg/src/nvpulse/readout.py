"""Stochastic optical readout: photon statistics, thresholding, averaging.

Only the m_S = 0 levels fluoresce. One readout window is modeled as a
Poisson photon count whose rate switches once if the spin flips during
the window (exponential flip time, re-flips neglected), plus detector
dark counts. Deciding "m_S = 0" above an integer threshold gives the
single-shot fidelity; the analytic counterpart of the same model (a
Poisson mixture with the flip time integrated by fixed quadrature) is
used to place the threshold and to cross-check the sampled statistics.

Randomness is reproducible: every shot draws from its own generator
spawned from (seed, shot index), so shot streams are independent of
evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import poisson

from .tomography import bright_population

_QUAD_NODES = 96


@dataclass(frozen=True)
class ReadoutParams:
    """Rates in photons/us, window in us, threshold in counts."""

    bright_rate: float
    dark_state_rate: float
    detector_dark_rate: float
    window_us: float
    t1_readout_us: float
    threshold: int

    def __post_init__(self):
        if min(self.bright_rate, self.dark_state_rate, self.detector_dark_rate) < 0:
            raise ValueError("rates must be non-negative")
        if self.window_us <= 0:
            raise ValueError("readout window must be positive")
        if self.bright_rate <= self.dark_state_rate:
            raise ValueError("bright rate must exceed the dark-state rate")
        if self.t1_readout_us <= 0:
            raise ValueError("t1_readout_us must be positive")
        if self.threshold < 0:
            raise ValueError("threshold must be non-negative")

    def state_rate(self, ms0: bool) -> float:
        return self.bright_rate if ms0 else self.dark_state_rate


@dataclass(frozen=True)
class ShotResult:
    count: int
    decided_ms0: bool
    true_ms0: bool

    @property
    def correct(self) -> bool:
        return self.decided_ms0 == self.true_ms0


@dataclass(frozen=True)
class AveragedSignal:
    mean_count: float
    contrast: float
    std_error: float
    cycles: int


def _flip_quadrature(params: ReadoutParams):
    """Nodes, weights and no-flip mass of the exponential flip time."""
    w = params.window_us
    t1 = params.t1_readout_us
    if not math.isfinite(t1):
        return np.empty(0), np.empty(0), 1.0
    x, gl_w = np.polynomial.legendre.leggauss(_QUAD_NODES)
    t = 0.5 * w * (x + 1.0)
    weights = 0.5 * w * gl_w * np.exp(-t / t1) / t1
    return t, weights, math.exp(-w / t1)


def _mean_counts(params: ReadoutParams, ms0: bool, flip_time: float | None = None) -> float:
    """Expected photon number for a true state, given (or without) a flip."""
    w = params.window_us
    r_s = params.state_rate(ms0)
    r_o = params.state_rate(not ms0)
    dark = params.detector_dark_rate * w
    if flip_time is None or flip_time >= w:
        return r_s * w + dark
    return r_s * flip_time + r_o * (w - flip_time) + dark


def count_distribution(params: ReadoutParams, ms0: bool, k_max: int) -> np.ndarray:
    """Analytic pmf of the photon count for a true state, up to k_max."""
    k = np.arange(k_max + 1)
    t, weights, stay = _flip_quadrature(params)
    pmf = stay * poisson.pmf(k, _mean_counts(params, ms0))
    for tf, wt in zip(t, weights):
        pmf = pmf + wt * poisson.pmf(k, _mean_counts(params, ms0, tf))
    return pmf


def expected_count(params: ReadoutParams, ms0: bool) -> float:
    t, weights, stay = _flip_quadrature(params)
    value = stay * _mean_counts(params, ms0)
    for tf, wt in zip(t, weights):
        value += wt * _mean_counts(params, ms0, tf)
    return float(value)


def _k_cap(params: ReadoutParams) -> int:
    lam = (params.bright_rate + params.detector_dark_rate) * params.window_us
    return int(math.ceil(lam + 12.0 * math.sqrt(lam + 1.0) + 20.0))


def decision_accuracy(params: ReadoutParams, threshold: int | None = None) -> float:
    """Balanced probability of calling the true state correctly."""
    th = params.threshold if threshold is None else threshold
    cap = max(_k_cap(params), th + 1)
    p_bright = count_distribution(params, True, cap)
    p_dark = count_distribution(params, False, cap)
    correct_bright = float(p_bright[th:].sum())
    correct_dark = float(p_dark[:th].sum())
    return 0.5 * (correct_bright + correct_dark)


def calibrate_threshold(params: ReadoutParams) -> tuple[int, float]:
    """Scan integer thresholds; return the balanced-accuracy maximizer.

    The scan covers [0, ceil(3 * bright_rate * window)] against the
    analytic Poisson mixture.
    """
    k_hi = int(math.ceil(3.0 * params.bright_rate * params.window_us))
    cap = max(_k_cap(params), k_hi + 1)
    p_bright = count_distribution(params, True, cap)
    p_dark = count_distribution(params, False, cap)
    best_th, best_acc = 0, -1.0
    for th in range(k_hi + 1):
        acc = 0.5 * (float(p_bright[th:].sum()) + float(p_dark[:th].sum()))
        if acc > best_acc:
            best_th, best_acc = th, acc
    return best_th, best_acc


def single_shot(rho, params: ReadoutParams, rng) -> ShotResult:
    """Sample one readout window: true state, flip, count, decision."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    p0 = min(1.0, max(0.0, bright_population(rho)))
    true_ms0 = bool(rng.random() < p0)
    if math.isfinite(params.t1_readout_us):
        flip = float(rng.exponential(params.t1_readout_us))
    else:
        flip = math.inf
    lam = _mean_counts(params, true_ms0, flip)
    count = int(rng.poisson(lam))
    return ShotResult(count, count >= params.threshold, true_ms0)


def shot_rngs(seed: int, n: int):
    """Independent per-shot generators, deterministic in (seed, index)."""
    return [np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(n)]


def run_shots(rho, params: ReadoutParams, n: int, seed: int) -> list[ShotResult]:
    return [single_shot(rho, params, rng) for rng in shot_rngs(seed, n)]


def averaged_signal(rho, params: ReadoutParams, cycles: int, seed: int) -> AveragedSignal:
    """Mean photon count over N cycles, normalized to the bright/dark span.

    The contrast maps the analytic pure-bright mean to 1 and pure-dark
    to 0; the standard error is the sample error of that contrast.
    """
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    counts = np.array([s.count for s in run_shots(rho, params, cycles, seed)], dtype=float)
    bright_ref = expected_count(params, True)
    dark_ref = expected_count(params, False)
    span = bright_ref - dark_ref
    mean = float(counts.mean())
    contrast = (mean - dark_ref) / span
    sem = float(counts.std(ddof=1) / math.sqrt(cycles)) / span if cycles > 1 else math.nan
    return AveragedSignal(mean, contrast, sem, cycles)
