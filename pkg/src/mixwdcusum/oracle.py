"""Brute-force reference computations for tests.

Deliberately naive: explicit subset lists and explicit phase paths. Each
function refuses inputs beyond a small enumeration budget.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .detector import DetectorParams
from .distributions import DensityPair
from .model import NetworkConfig

SUBSET_BUDGET = 10**6
PATH_BUDGET = 10**6


class BudgetExceeded(RuntimeError):
    pass


def mixture_llr_enum(llrs, j: int):
    """log of the mean over all size-j subsets of exp(sum of member llrs).

    Accepts one vector or a batch (..., L).
    """
    llrs = np.asarray(llrs, dtype=float)
    L = llrs.shape[-1]
    if not 0 <= j <= L:
        raise ValueError(f"subset size {j} outside 0..{L}")
    count = math.comb(L, j)
    if count > SUBSET_BUDGET:
        raise BudgetExceeded(f"C({L},{j}) = {count} subsets")
    if j == 0:
        out = np.zeros(llrs.shape[:-1])
    else:
        members = np.array(list(itertools.combinations(range(L), j)))
        terms = llrs[..., members].sum(axis=-1)
        top = terms.max(axis=-1)
        out = top + np.log(np.exp(terms - top[..., None]).sum(axis=-1)) - math.log(count)
    return float(out) if out.ndim == 0 else out


def _phase_table(llrs: Sequence[float], config: NetworkConfig) -> list[float]:
    return [mixture_llr_enum(llrs, s) for s in config.sizes()]


def batch_statistic(observations, params: DetectorParams, pair: DensityPair,
                    config: NetworkConfig) -> float:
    """W[k] by maximising over every monotone phase path.

    A path is a non-decreasing sequence phi[0..k] over {0..P}; phi[0] is free
    since every Omega^(i)[0] is 0. Stepping from phase j to i costs
    sum_{r=j}^{i-1} log rho_r (rho_0 = 1), and a step spent in phase i >= 1
    earns llr_i[t] + log(1 - rho_i) (rho_P = 0). The all-zero path scores 0,
    which supplies the floor of the statistic.
    """
    X = [np.asarray(x, dtype=float) for x in observations]
    k = len(X)
    P = config.n_phases
    if k > 10 or P > 4:
        raise BudgetExceeded(f"k={k}, phases={P} beyond oracle limits")
    if math.comb(k + 1 + P, P) > PATH_BUDGET:
        raise BudgetExceeded("too many phase paths")
    rho = [1.0] + list(params.rho) + [0.0]
    log_rho = [0.0] + [math.log(r) for r in params.rho]
    leak = [0.0] + [math.log(1.0 - r) for r in rho[1:P]] + [0.0]
    tables = [_phase_table(pair.llr(x), config) for x in X]

    best = 0.0
    for path in itertools.combinations_with_replacement(range(P + 1), k + 1):
        if path[-1] == 0:
            continue
        score = 0.0
        for t in range(1, k + 1):
            j, i = path[t - 1], path[t]
            score += sum(log_rho[j:i])
            if i > 0:
                score += tables[t - 1][i - 1] + leak[i]
        best = max(best, score)
    return best


@dataclass(frozen=True)
class FixedHypothesis:
    """Change at ``nu`` with durations ``d`` and explicit trajectory.

    ``trajectory[t - 1]`` is the affected sensor set at time t (only times
    at or after ``nu`` are read).
    """

    nu: int
    d: tuple[int, ...]
    trajectory: Sequence[Sequence[int]]


def _phase_of(t: int, nu: int, d: Sequence[int]) -> int:
    if t < nu:
        return 0
    phase, start = 1, nu
    for dur in d:
        if t < start + dur:
            return phase
        start += dur
        phase += 1
    return phase


def gamma_fixed(observations, hyp: FixedHypothesis, pair: DensityPair, k: int,
                config: NetworkConfig | None = None):
    """log Gamma_S(k, nu, d): affected-set llr sums over times nu..k.

    ``observations`` has shape (..., T, L) with T >= k; 0 when k < nu.
    """
    X = np.asarray(observations, dtype=float)
    total = np.zeros(X.shape[:-2])
    for t in range(hyp.nu, k + 1):
        members = list(hyp.trajectory[t - 1])
        if config is not None:
            size = config.m + _phase_of(t, hyp.nu, hyp.d) - 1
            if len(set(members)) != size:
                raise ValueError(f"trajectory at t={t} has {len(members)} sensors, phase needs {size}")
        total = total + pair.llr(X[..., t - 1, members]).sum(axis=-1)
    return float(total) if total.ndim == 0 else total


def l_mixture(observations, nu: int, d: Sequence[int], pair: DensityPair,
              config: NetworkConfig, k: int):
    """log L(k, nu, d): phase-segmented product of mixture ratios; 0 when k < nu."""
    X = np.asarray(observations, dtype=float)
    total = np.zeros(X.shape[:-2])
    for t in range(nu, k + 1):
        size = config.m + _phase_of(t, nu, d) - 1
        total = total + mixture_llr_enum(pair.llr(X[..., t - 1, :]), size)
    return float(total) if total.ndim == 0 else total
