"""Mixture-WD-CuSum statistic and stopping rule.

With P = n - m + 1 phases, the state holds Omega^(0..P) and

    Omega^(i)[k] = max_{0<=j<=i} (Omega^(j)[k-1] + sum_{r=j}^{i-1} log rho_r)
                   + llr_i[k] + log(1 - rho_i)
    W[k]         = max(Omega^(1)[k], ..., Omega^(P)[k], 0)
    tau_W        = inf{k >= 1 : W[k] >= b}

with rho_0 = 1, rho_P = 0 and Omega^(0) pinned at 0. All Omega^(i)[0] start
at 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .distributions import ConfigurationError, DensityPair
from .mixture import phase_llrs
from .model import NetworkConfig


@dataclass(frozen=True)
class DetectorParams:
    rho: tuple[float, ...]
    b: float
    transition: np.ndarray = field(init=False, repr=False, compare=False)
    cum_log_rho: np.ndarray = field(init=False, repr=False, compare=False)
    leak: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rho = tuple(float(r) for r in self.rho)
        object.__setattr__(self, "rho", rho)
        if any(not 0.0 < r < 1.0 for r in rho):
            raise ConfigurationError(f"every rho must lie in (0, 1), got {rho}")
        if not self.b >= 0 or not math.isfinite(self.b):
            raise ConfigurationError(f"threshold must be finite and non-negative, got {self.b}")
        P = len(rho) + 1
        # S[i] = sum_{r<i} log rho_r with rho_0 = 1; T[j, i] = S[i] - S[j] for j <= i
        S = np.concatenate([[0.0, 0.0], np.cumsum([math.log(r) for r in rho])])
        T = np.full((P + 1, P + 1), -np.inf)
        for j in range(P + 1):
            T[j, j:] = S[j:] - S[j]
        leak = np.zeros(P + 1)
        leak[1:P] = [math.log1p(-r) for r in rho]
        for arr in (S, T, leak):
            arr.setflags(write=False)
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "cum_log_rho", S)
        object.__setattr__(self, "leak", leak)

    @property
    def n_phases(self) -> int:
        return len(self.rho) + 1

    def with_threshold(self, b: float) -> "DetectorParams":
        return DetectorParams(self.rho, b)

    def check(self, config: NetworkConfig) -> None:
        if len(self.rho) != config.n_transient:
            raise ConfigurationError(f"{len(self.rho)} rho values given, config needs {config.n_transient}")


def params_for_threshold(b: float, config: NetworkConfig) -> DetectorParams:
    """Threshold ``b`` with the rho_i = 1/b rule (requires b > 1 when there are transient phases)."""
    if config.n_transient and not b > 1.0:
        raise ConfigurationError(f"rho = 1/b needs b > 1, got b = {b}")
    rho = (1.0 / b,) * config.n_transient
    return DetectorParams(rho, b)


def default_params(gamma: float, config: NetworkConfig) -> DetectorParams:
    """b = log(gamma), rho_i = 1/b."""
    if not gamma > math.e:
        raise ConfigurationError(f"gamma must exceed e so that 1/log(gamma) < 1, got {gamma}")
    return params_for_threshold(math.log(gamma), config)


@dataclass(frozen=True)
class DetectorState:
    omega: np.ndarray
    W: float
    k: int


def init_state(config: NetworkConfig) -> DetectorState:
    return DetectorState(np.zeros(config.n_phases + 1), 0.0, 0)


def update_omega(omega: np.ndarray, params: DetectorParams, llrs: np.ndarray) -> np.ndarray:
    """One recursion step on a single state (P+1,) or a batch (A, P+1).

    ``llrs`` holds the phase table for phases 1..P, shape (..., P). The whole
    old state is read before anything is written. The maximisation over
    j <= i of Omega^(j) + (S_i - S_j) is a running max of Omega^(j) - S_j.
    """
    S = params.cum_log_rho
    new = np.maximum.accumulate(omega - S, axis=-1)
    new += S
    new[..., 1:] += llrs
    new[..., 1:] += params.leak[1:]
    new[..., 0] = 0.0
    return new


def statistic(omega: np.ndarray):
    return np.maximum(omega[..., 1:].max(axis=-1), 0.0)


def update(state: DetectorState, params: DetectorParams, llrs) -> DetectorState:
    llrs = np.asarray(llrs, dtype=float)
    if llrs.shape != (params.n_phases,):
        raise ConfigurationError(f"expected {params.n_phases} phase llrs, got shape {llrs.shape}")
    omega = update_omega(state.omega, params, llrs)
    return DetectorState(omega, float(statistic(omega)), state.k + 1)


def step(state: DetectorState, params: DetectorParams, pair: DensityPair,
         config: NetworkConfig, x) -> DetectorState:
    values = np.asarray(getattr(x, "values", x), dtype=float)
    if values.shape != (config.L,):
        raise ConfigurationError(f"observation has shape {values.shape}, network has L={config.L}")
    return update(state, params, phase_llrs(pair, config, values))


@dataclass(frozen=True)
class AlarmDecision:
    stopped: bool
    stopping_time: int | None
    horizon: int

    @property
    def censored(self) -> bool:
        return not self.stopped


def run_until_stop(stream: Iterable, params: DetectorParams, pair: DensityPair,
                   config: NetworkConfig, horizon: int, trace: list | None = None) -> AlarmDecision:
    """Feed observations until W >= b or ``horizon`` steps have been seen.

    ``stream`` yields observation vectors (or objects with ``.values``). A
    stream that runs out early is reported as censored at the steps consumed.
    If ``trace`` is a list, every post-update state is appended to it.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    params.check(config)
    state = init_state(config)
    for x in stream:
        state = step(state, params, pair, config, x)
        if trace is not None:
            trace.append(state)
        if state.W >= params.b:
            return AlarmDecision(True, state.k, horizon)
        if state.k >= horizon:
            break
    return AlarmDecision(False, None, horizon)
