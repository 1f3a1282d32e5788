"""Uniform-placement mixture likelihood ratios and their KL numbers.

For per-sensor log-ratios llr_1..llr_L and anomaly size j, the mixture
log-likelihood ratio is

    log( e_j(exp(llr_1), ..., exp(llr_L)) / C(L, j) )

where e_j is the j-th elementary symmetric polynomial. Unaffected sensors
contribute g/g = 1, so only affected-sensor ratios enter each term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import DensityPair
from .model import NetworkConfig, anomaly_size

# Fixed chunk size for KL sampling. Each chunk is seeded independently so
# results do not depend on how the chunks are scheduled.
KL_CHUNK = 1 << 16


def log_comb(L: int, j: int) -> float:
    return math.log(math.comb(L, j))


def log_esp_table(llrs, max_size: int | None = None) -> np.ndarray:
    """log e_s for s = 0..max_size over the last axis of ``llrs``.

    Triangular DP E[t][s] = logaddexp(E[t-1][s], E[t-1][s-1] + llr_t), swept
    in ascending sensor order. Works on a single vector or a batch (..., L).
    """
    llrs = np.asarray(llrs, dtype=float)
    L = llrs.shape[-1]
    smax = L if max_size is None else max_size
    if not 0 <= smax <= L:
        raise ValueError(f"subset size {smax} outside 0..{L}")
    cols = np.ascontiguousarray(np.moveaxis(llrs, -1, 0))
    # size axis first keeps every row contiguous for batched input
    E = np.full((smax + 1,) + llrs.shape[:-1], -np.inf)
    E[0] = 0.0
    for t in range(L):
        a = cols[t]
        hi = min(t + 1, smax)
        if hi == 0:
            break
        top = E[hi - 1] + a
        if hi > 1:
            E[1:hi] = np.logaddexp(E[1:hi], E[0:hi - 1] + a)
        if hi == t + 1:
            # size t+1 first becomes reachable here: logaddexp(-inf, y) == y
            E[hi] = top
        else:
            E[hi] = np.logaddexp(E[hi], top)
    return np.moveaxis(E, 0, -1)


def log_elementary_symmetric(llrs, j: int):
    llrs = np.asarray(llrs, dtype=float)
    L = llrs.shape[-1]
    if not 0 <= j <= L:
        raise ValueError(f"subset size {j} outside 0..{L}")
    out = log_esp_table(llrs, j)[..., j]
    return float(out) if np.ndim(out) == 0 else out


def mixture_llr(llrs, j: int):
    llrs = np.asarray(llrs, dtype=float)
    L = llrs.shape[-1]
    if not 1 <= j <= L:
        raise ValueError(f"subset size {j} outside 1..{L}")
    return log_elementary_symmetric(llrs, j) - log_comb(L, j)


def phase_llrs_from_sensor_llrs(llrs, config: NetworkConfig) -> np.ndarray:
    """Mixture log-LRs for phases 1..n-m+1 from one shared DP pass.

    Returns shape (..., n-m+1).
    """
    llrs = np.asarray(llrs, dtype=float)
    if llrs.shape[-1] != config.L:
        raise ValueError(f"expected {config.L} sensor values, got {llrs.shape[-1]}")
    E = log_esp_table(llrs, config.n)
    sizes = np.arange(config.m, config.n + 1)
    norm = np.array([log_comb(config.L, int(s)) for s in sizes])
    return E[..., sizes] - norm


def phase_llrs(pair: DensityPair, config: NetworkConfig, x) -> np.ndarray:
    """Per-phase table log pbar^(i)(x)/g(x), i = 1..n-m+1 (index 0 holds phase 1)."""
    values = getattr(x, "values", x)
    return phase_llrs_from_sensor_llrs(pair.llr(values), config)


@dataclass(frozen=True)
class KlEstimate:
    phase: int
    size: int
    estimate: float
    stderr: float
    trials: int
    seed: int


def _phase_chunk(pair, config, phase, count, rng):
    size = anomaly_size(config, phase)
    L = config.L
    z = rng.standard_normal((count, L))
    keys = rng.random((count, L))
    ranks = np.argsort(np.argsort(keys, axis=1, kind="stable"), axis=1, kind="stable")
    x = np.where(ranks < size, pair.post.from_standard(z), pair.pre.from_standard(z))
    return mixture_llr(pair.llr(x), size)


def kl_samples(pair: DensityPair, config: NetworkConfig, phase: int, trials: int, seed: int) -> np.ndarray:
    """Draws of the phase-``phase`` mixture log-LR under the phase mixture model."""
    out = np.empty(trials)
    for c, start in enumerate(range(0, trials, KL_CHUNK)):
        count = min(KL_CHUNK, trials - start)
        rng = np.random.default_rng([int(seed), int(phase), c])
        out[start:start + count] = _phase_chunk(pair, config, phase, count, rng)
    return out


def estimate_kl(pair: DensityPair, config: NetworkConfig, phase: int, trials: int, seed: int) -> KlEstimate:
    if trials < 1000:
        raise ValueError("estimate_kl needs at least 1000 trials")
    if not 1 <= phase <= config.n_phases:
        raise ValueError(f"phase {phase} outside 1..{config.n_phases}")
    s = kl_samples(pair, config, phase, trials, seed)
    mean = math.fsum(s) / trials
    sd = float(np.std(s, ddof=1))
    return KlEstimate(phase, anomaly_size(config, phase), mean, sd / math.sqrt(trials), trials, int(seed))


def estimate_kl_ladder(pair, config, trials, seed) -> list[KlEstimate]:
    return [estimate_kl(pair, config, i, trials, seed) for i in range(1, config.n_phases + 1)]
