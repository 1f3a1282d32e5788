"""Monte Carlo estimation of false-alarm and delay performance.

All trials start at k = 1, so the batch engine advances every live trial in
lockstep. A trial drops out once each detector attached to it has stopped.
Every trial draws from its own :class:`~mixwdcusum.model.TrialRng`, which
makes the stopping time of trial ``t`` identical to a scalar replay of
``gen_stream(..., TrialRng.from_seed(seed, t))`` through ``run_until_stop``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .detector import DetectorParams, params_for_threshold, default_params, statistic, update_omega
from .distributions import ConfigurationError, DensityPair
from .mixture import estimate_kl_ladder, log_comb, log_esp_table
from .model import (NetworkConfig, PhaseSchedule, TrialRng, anomaly_size, make_policy,
                    phase_at)

log = logging.getLogger(__name__)

CHUNK_TRIALS = 4096
BUFFER_ELEMENTS = 1 << 22
CENSOR_BUDGET = 0.001
Z95 = 1.959963984540054
Z95_ONE_SIDED = 1.6448536269514722


class CalibrationError(RuntimeError):
    pass


class CensoringError(RuntimeError):
    pass


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    trials: int
    censored_count: int
    horizon: int
    seed: int

    @property
    def censored(self) -> bool:
        """True when the mean is only a lower bound."""
        return self.censored_count > 0

    def ci(self, z: float = Z95) -> tuple[float, float]:
        return self.mean - z * self.stderr, self.mean + z * self.stderr

    def lower_confidence_limit(self) -> float:
        return self.mean - Z95_ONE_SIDED * self.stderr

    def overlaps(self, other: "McEstimate") -> bool:
        lo1, hi1 = self.ci()
        lo2, hi2 = other.ci()
        return lo1 <= hi2 and lo2 <= hi1


@dataclass
class StopTimes:
    """Stopping times per detector (rows) and trial (columns).

    Censored entries hold the horizon they were cut at.
    """

    times: np.ndarray
    censored: np.ndarray
    horizon: int
    aborted: bool = False

    def estimate(self, row: int, seed: int) -> McEstimate:
        return summarize(self.times[row], self.censored[row], self.horizon, seed)


def summarize(times: np.ndarray, censored: np.ndarray, horizon: int, seed: int) -> McEstimate:
    n = int(times.size)
    mean = math.fsum(float(t) for t in times) / n
    sd = float(np.std(times, ddof=1)) if n > 1 else 0.0
    return McEstimate(mean, sd / math.sqrt(n), n, int(np.count_nonzero(censored)), int(horizon), int(seed))


# -- batch engine -----------------------------------------------------------


@dataclass(frozen=True)
class _Job:
    pair: DensityPair
    config: NetworkConfig
    schedule: PhaseSchedule
    policy: str
    detectors: tuple
    horizon: int
    master_seed: int
    first: int
    count: int
    mean_cap: float | None = None


def _run_chunk(job: _Job):
    pair, cfg, sched = job.pair, job.config, job.schedule
    policy = make_policy(job.policy, cfg, sched)
    L = cfg.L
    D = len(job.detectors)
    T = job.count
    rngs = [TrialRng.from_seed(job.master_seed, job.first + t) for t in range(T)]

    smax = max(dc.n for dc, _ in job.detectors)
    sizes = [np.arange(dc.m, dc.n + 1) for dc, _ in job.detectors]
    norms = [np.array([log_comb(L, int(s)) for s in sz]) for sz, (dc, _) in zip(sizes, job.detectors)]
    omegas = [np.zeros((T, p.n_phases + 1)) for _, p in job.detectors]
    thresholds = [p.b for _, p in job.detectors]

    times = np.full((D, T), job.horizon, dtype=np.int64)
    done = np.zeros((D, T), dtype=bool)
    active = np.arange(T)
    stopped_sum = 0  # detector 0, for the mean cap
    # noise buffers are (time, row, sensor); ``rows`` maps live trials to buffer rows
    zbuf = keybuf = None
    rows = None
    bpos = blen = 0
    k = 0
    aborted = False

    while active.size and k < job.horizon:
        if bpos == blen:
            blen = int(min(1024, max(16, BUFFER_ELEMENTS // (active.size * L)), job.horizon - k))
            zbuf = np.stack([rngs[a].noise.standard_normal((blen, L)) for a in active], axis=1)
            if policy.needs_keys:
                keybuf = np.stack([rngs[a].trajectory.random((blen, L)) for a in active], axis=1)
            rows = np.arange(active.size)
            bpos = 0
        k += 1
        z = zbuf[bpos] if rows.size == zbuf.shape[1] else zbuf[bpos][rows]
        keys = None
        if policy.needs_keys:
            keys = keybuf[bpos] if rows.size == keybuf.shape[1] else keybuf[bpos][rows]
        bpos += 1

        size = anomaly_size(cfg, phase_at(sched, k))
        mask = policy.mask(k, size, L, keys)
        x = np.where(mask, pair.post.from_standard(z), pair.pre.from_standard(z))
        E = log_esp_table(pair.llr(x), smax)

        for d, (dc, params) in enumerate(job.detectors):
            omegas[d] = update_omega(omegas[d], params, E[:, sizes[d]] - norms[d])
            hit = (statistic(omegas[d]) >= thresholds[d]) & ~done[d, active]
            if hit.any():
                idx = active[hit]
                times[d, idx] = k
                done[d, idx] = True
                if d == 0:
                    stopped_sum += k * idx.size

        keep = ~done[:, active].all(axis=0)
        if not keep.all():
            active = active[keep]
            rows = rows[keep]
            omegas = [o[keep] for o in omegas]

        if job.mean_cap is not None and active.size:
            live = np.count_nonzero(~done[0, active])
            if (stopped_sum + live * k) / T > job.mean_cap:
                aborted = True
                break

    horizon = k if aborted else job.horizon
    times[~done] = horizon
    return times, ~done, horizon, aborted


def simulate_stops(pair: DensityPair, config: NetworkConfig, schedule: PhaseSchedule,
                   detectors: Sequence[tuple[NetworkConfig, DetectorParams]], trials: int,
                   horizon: int, master_seed: int, policy: str = "uniform", workers: int = 1,
                   mean_cap: float | None = None) -> StopTimes:
    """Run ``trials`` independent streams through every detector.

    ``config`` and ``schedule`` describe how the data are generated; each
    detector carries the (possibly different) network model it assumes.
    """
    if trials < 1 or horizon < 1:
        raise ValueError("trials and horizon must be >= 1")
    schedule.check(config)
    for dc, params in detectors:
        params.check(dc)
        if dc.L != config.L:
            raise ConfigurationError(f"detector assumes L={dc.L}, streams have L={config.L}")
    jobs = [
        _Job(pair, config, schedule, policy, tuple(detectors), int(horizon), int(master_seed),
             first, min(CHUNK_TRIALS, trials - first), mean_cap)
        for first in range(0, trials, CHUNK_TRIALS)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(j) for j in jobs]

    aborted = any(r[3] for r in results)
    if aborted:
        partial = np.concatenate([r[0][0] for r in results])
        if partial.mean() <= mean_cap:
            # a capped chunk could flip the comparison; redo those uncapped
            results = [
                _run_chunk(_Job(**{**j.__dict__, "mean_cap": None})) if r[3] else r
                for j, r in zip(jobs, results)
            ]
            aborted = False
    times = np.concatenate([r[0] for r in results], axis=1)
    cens = np.concatenate([r[1] for r in results], axis=1)
    eff_horizon = max(r[2] for r in results) if aborted else int(horizon)
    return StopTimes(times, cens, eff_horizon, aborted)


# -- estimators -------------------------------------------------------------


def estimate_mtfa(params: DetectorParams, pair: DensityPair, config: NetworkConfig, trials: int,
                  horizon: int, master_seed: int, workers: int = 1,
                  mean_cap: float | None = None) -> McEstimate:
    """Mean stopping time under the pre-change law; censored runs count as the horizon."""
    st = simulate_stops(pair, config, PhaseSchedule.never(config), [(config, params)], trials,
                        horizon, master_seed, policy="prefix", workers=workers, mean_cap=mean_cap)
    return st.estimate(0, master_seed)


def estimate_wadd(params: DetectorParams, pair: DensityPair, config: NetworkConfig,
                  schedule: PhaseSchedule, policy: str, trials: int, horizon: int,
                  master_seed: int, detector_config: NetworkConfig | None = None,
                  workers: int = 1) -> McEstimate:
    """Mean detection delay tau - nu + 1 with the change at nu_1 = 1.

    Runs always start from a fresh detector state. ``detector_config`` lets
    the detector assume a different (m, n) than the one generating the data.
    """
    if schedule.nu1 != 1:
        raise ConfigurationError(f"delay is estimated at nu1 = 1 only, got {schedule.nu1}")
    dc = detector_config or config
    st = simulate_stops(pair, config, schedule, [(dc, params)], trials, horizon, master_seed,
                        policy=policy, workers=workers)
    return st.estimate(0, master_seed)


def check_censoring(est: McEstimate, what: str, budget: float = CENSOR_BUDGET) -> None:
    if est.censored_count > budget * est.trials:
        raise CensoringError(
            f"{what}: {est.censored_count}/{est.trials} runs censored at horizon {est.horizon}"
        )


# -- calibration ------------------------------------------------------------


@dataclass(frozen=True)
class Calibration:
    b: float
    estimate: McEstimate
    iterations: int


def calibrate_threshold(target_mtfa: float, pair: DensityPair, config: NetworkConfig, trials: int,
                        tolerance_rel: float = 0.05, master_seed: int = 0, workers: int = 1,
                        horizon: int | None = None, max_iter: int = 40) -> Calibration:
    """Bisect on b until the estimated MTFA (with rho = 1/b) is within
    ``tolerance_rel`` of ``target_mtfa``.

    Every evaluation reuses the same seeds. The search bracket is
    [log(target)/4, 4 log(target)], widened once on failure.
    """
    if target_mtfa < 10:
        raise ValueError("target MTFA must be at least 10")
    horizon = horizon or int(math.ceil(50 * target_mtfa))
    floor = 1.0 + 1e-9 if config.n_transient else 0.0
    lo, hi = max(math.log(target_mtfa) / 4, floor), 4 * math.log(target_mtfa)
    cap = target_mtfa * (1 + tolerance_rel) * 1.5
    iterations = 0
    for attempt in range(2):
        a, c = lo, hi
        for _ in range(max_iter):
            mid = 0.5 * (a + c)
            iterations += 1
            est = estimate_mtfa(params_for_threshold(mid, config), pair, config, trials, horizon,
                                master_seed, workers=workers, mean_cap=cap)
            log.debug("calibrate b=%.6f mtfa=%.3f (censored %d)", mid, est.mean, est.censored_count)
            if abs(est.mean - target_mtfa) <= tolerance_rel * target_mtfa:
                if est.censored_count <= CENSOR_BUDGET * trials:
                    return Calibration(mid, est, iterations)
            if est.mean < target_mtfa:
                a = mid
            else:
                c = mid
            if c - a < 1e-9:
                break
        lo, hi = max(lo / 2, floor), hi * 2
    raise CalibrationError(f"no threshold reached MTFA {target_mtfa} within {tolerance_rel:.0%}")


# -- asymptotic theory -------------------------------------------------------


@dataclass(frozen=True)
class ScalingConstants:
    c: tuple[float, ...]
    h: int


def scaling_constants(d: Sequence[int], gamma: float, kl: Sequence[float]) -> ScalingConstants:
    """c_i = d_i * I_i / log(gamma); h is the first phase whose cumulative c reaches 1.

    ``kl[i - 1]`` is the KL number of phase i (anomaly size m + i - 1).
    """
    if not gamma > 1:
        raise ValueError("gamma must exceed 1")
    if any(v <= 0 for v in kl):
        raise ValueError("KL numbers must be positive")
    lg = math.log(gamma)
    c = tuple(di * kl[i] / lg for i, di in enumerate(d))
    acc = 0.0
    for j, cj in enumerate(c, start=1):
        acc += cj
        if acc >= 1.0:
            return ScalingConstants(c, j)
    return ScalingConstants(c, len(d) + 1)


def theory_delay(gamma: float, kl: Sequence[float], constants: ScalingConstants,
                 config: NetworkConfig | None = None) -> float:
    """First-order asymptotic worst-path delay."""
    if config is not None and len(kl) != config.n_phases:
        raise ValueError(f"need {config.n_phases} KL numbers, got {len(kl)}")
    h = constants.h
    before = constants.c[:h - 1]
    return math.log(gamma) * (
        sum(ci / kl[i] for i, ci in enumerate(before)) + (1.0 - sum(before)) / kl[h - 1]
    )


# -- curves -----------------------------------------------------------------


@dataclass(frozen=True)
class CurveRow:
    gamma_target: float
    b: float
    rho: tuple[float, ...]
    calibrated: bool
    mtfa: McEstimate
    wadd: McEstimate
    theory_wadd: float
    config: NetworkConfig
    detector_config: NetworkConfig
    durations: tuple[int, ...]
    policy: str

    CSV_HEADER = ("gamma_target,b,calibrated,mtfa_mean,mtfa_stderr,wadd_mean,wadd_stderr,"
                  "theory_wadd,trials,censored,horizon,seed,L,m,n,d,policy,det_m,det_n")

    def csv_fields(self) -> list[str]:
        return [
            repr(self.gamma_target), repr(self.b), str(int(self.calibrated)),
            repr(self.mtfa.mean), repr(self.mtfa.stderr),
            repr(self.wadd.mean), repr(self.wadd.stderr), repr(self.theory_wadd),
            str(self.wadd.trials), str(self.mtfa.censored_count + self.wadd.censored_count),
            str(self.wadd.horizon), str(self.wadd.seed),
            str(self.config.L), str(self.config.m), str(self.config.n),
            ";".join(str(d) for d in self.durations), self.policy,
            str(self.detector_config.m), str(self.detector_config.n),
        ]


@dataclass
class CurveSetup:
    pair: DensityPair
    config: NetworkConfig
    durations: tuple[int, ...]
    detector_config: NetworkConfig | None = None
    policy: str = "uniform"
    mtfa_trials: int = 2500
    wadd_trials: int = 2000
    kl_trials: int = 100_000
    tolerance_rel: float = 0.05
    mtfa_horizon: int | None = None
    wadd_horizon: int | None = None
    workers: int = 1
    kl: tuple[float, ...] | None = field(default=None)


def curve(gamma_grid: Sequence[float], setup: CurveSetup, calibrate: bool, master_seed: int) -> list[CurveRow]:
    """One row per gamma: threshold, MTFA and WADD estimates, and theory delay."""
    grid = [float(g) for g in gamma_grid]
    if grid != sorted(grid):
        raise ValueError("gamma grid must be ascending")
    cfg = setup.config
    dc = setup.detector_config or cfg
    schedule = PhaseSchedule(1, setup.durations)
    schedule.check(cfg)
    kl = setup.kl or tuple(e.estimate for e in estimate_kl_ladder(setup.pair, cfg, setup.kl_trials, master_seed))

    rows = []
    for gamma in grid:
        if calibrate:
            cal = calibrate_threshold(gamma, setup.pair, dc, setup.mtfa_trials, setup.tolerance_rel,
                                      master_seed, setup.workers, setup.mtfa_horizon)
            params, mtfa = params_for_threshold(cal.b, dc), cal.estimate
        else:
            params = default_params(gamma, dc)
            horizon = setup.mtfa_horizon or int(math.ceil(5000 * gamma))
            mtfa = estimate_mtfa(params, setup.pair, dc, setup.mtfa_trials, horizon, master_seed,
                                 workers=setup.workers)
        check_censoring(mtfa, f"MTFA at gamma={gamma:g}")
        consts = scaling_constants(setup.durations, gamma, kl)
        theory = theory_delay(gamma, kl, consts, cfg)
        horizon = setup.wadd_horizon or max(1000, int(math.ceil(100 * theory)))
        wadd = estimate_wadd(params, setup.pair, cfg, schedule, setup.policy, setup.wadd_trials,
                             horizon, master_seed, detector_config=dc, workers=setup.workers)
        check_censoring(wadd, f"WADD at gamma={gamma:g}")
        rows.append(CurveRow(gamma, params.b, params.rho, calibrate, mtfa, wadd, theory, cfg, dc,
                             tuple(setup.durations), setup.policy))
    return rows
