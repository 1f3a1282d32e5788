"""Network configuration, phase timing, anomaly trajectories and stream generation.

Sensors are indexed from 0 in the Python API. The CSV dump format uses
1-based sensor labels.

Random numbers for one trial come from a :class:`TrialRng`, built from a
master seed and a trial index::

    SeedSequence([master_seed, trial_index]).spawn(2) -> (noise, trajectory)

The noise generator yields exactly one standard normal per sensor per time
step. The trajectory generator yields ``L`` uniforms per step and is used
only by the uniform-random policy. Because both are consumed strictly in time
order, trial ``t`` can be replayed on its own, whatever block size or worker
layout produced it originally.
"""

from __future__ import annotations

import bisect
import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .distributions import ConfigurationError, DensityPair


@dataclass(frozen=True)
class NetworkConfig:
    L: int
    m: int
    n: int

    def __post_init__(self):
        for name in ("L", "m", "n"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")
        if not self.m <= self.n <= self.L:
            raise ConfigurationError(f"need 1 <= m <= n <= L, got m={self.m}, n={self.n}, L={self.L}")

    @property
    def n_phases(self) -> int:
        return self.n - self.m + 1

    @property
    def n_transient(self) -> int:
        return self.n - self.m

    def sizes(self) -> tuple[int, ...]:
        """Anomaly size for phases 1..n-m+1."""
        return tuple(range(self.m, self.n + 1))


@dataclass(frozen=True)
class PhaseSchedule:
    """First changepoint ``nu1`` (``None`` means the change never happens) and
    transient durations d_1..d_{n-m}."""

    nu1: int | None
    durations: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "durations", tuple(int(d) for d in self.durations))
        if self.nu1 is not None and self.nu1 < 1:
            raise ConfigurationError(f"nu1 must be >= 1, got {self.nu1}")
        if any(d < 0 for d in self.durations):
            raise ConfigurationError(f"durations must be non-negative, got {self.durations}")

    @classmethod
    def never(cls, config: NetworkConfig | None = None) -> "PhaseSchedule":
        d = (0,) * config.n_transient if config is not None else ()
        return cls(None, d)

    @property
    def is_never(self) -> bool:
        return self.nu1 is None

    def changepoints(self) -> tuple[int, ...]:
        """nu_1..nu_{n-m+1}. The final phase has no end; nothing stands in for infinity."""
        if self.nu1 is None:
            return ()
        nus = [self.nu1]
        for d in self.durations:
            nus.append(nus[-1] + d)
        return tuple(nus)

    def check(self, config: NetworkConfig) -> None:
        if len(self.durations) != config.n_transient:
            raise ConfigurationError(
                f"schedule has {len(self.durations)} durations, config needs {config.n_transient}"
            )


def phase_at(schedule: PhaseSchedule, k: int) -> int:
    """Phase index at time ``k`` (0 before the change). Zero-length phases are skipped."""
    if k < 1:
        raise ValueError(f"time index must be >= 1, got {k}")
    if schedule.nu1 is None or k < schedule.nu1:
        return 0
    return bisect.bisect_right(schedule.changepoints(), k)


def anomaly_size(config: NetworkConfig, phase: int) -> int:
    if not 0 <= phase <= config.n_phases:
        raise ValueError(f"phase {phase} outside 0..{config.n_phases}")
    return 0 if phase == 0 else config.m + phase - 1


# -- trajectory policies ----------------------------------------------------


class PrefixPolicy:
    """Anomaly of size s occupies sensors 0..s-1."""

    kind = "prefix"
    needs_keys = False

    def mask(self, k: int, size: int, L: int, keys=None) -> np.ndarray:
        out = np.zeros(L, dtype=bool)
        out[:size] = True
        return out


class UniformPolicy:
    """Affected set resampled every step, uniform over all size-s subsets.

    The subset is the ``s`` sensors holding the smallest of ``L`` iid uniform
    keys, so one key vector serves every phase size.
    """

    kind = "uniform"
    needs_keys = True

    def mask(self, k: int, size: int, L: int, keys=None) -> np.ndarray:
        keys = np.asarray(keys)
        ranks = np.argsort(np.argsort(keys, axis=-1, kind="stable"), axis=-1, kind="stable")
        return ranks < size


@dataclass(frozen=True)
class FixedPolicy:
    """Explicit sensor set per time step.

    ``sets`` is either a callable ``k -> sensors`` or a sequence whose entry
    ``k - 1`` holds the set for time ``k``.
    """

    sets: Callable[[int], Sequence[int]] | Sequence[Sequence[int]]
    label: str = "fixed"

    kind = "fixed"
    needs_keys = False

    def sensors(self, k: int) -> tuple[int, ...]:
        if callable(self.sets):
            return tuple(self.sets(k))
        return tuple(self.sets[k - 1])

    def mask(self, k: int, size: int, L: int, keys=None) -> np.ndarray:
        members = self.sensors(k) if size > 0 else ()
        out = np.zeros(L, dtype=bool)
        if size == 0:
            return out
        if len(set(members)) != size or len(members) != size:
            raise ConfigurationError(f"fixed trajectory at k={k} has {len(set(members))} sensors, phase needs {size}")
        if min(members) < 0 or max(members) >= L:
            raise ConfigurationError(f"fixed trajectory at k={k} names a sensor outside 0..{L - 1}")
        out[list(members)] = True
        return out


def rotating_policy(config: NetworkConfig, schedule: PhaseSchedule) -> FixedPolicy:
    """Deterministic trajectory: at time k the anomaly covers a cyclic window
    of sensors starting at (k - 1) mod L."""
    L = config.L

    def sets(k: int) -> tuple[int, ...]:
        size = anomaly_size(config, phase_at(schedule, k))
        return tuple((k - 1 + r) % L for r in range(size))

    return FixedPolicy(sets, label="rotating")


def make_policy(name: str, config: NetworkConfig, schedule: PhaseSchedule):
    if name == "prefix":
        return PrefixPolicy()
    if name in ("uniform", "uniform-random"):
        return UniformPolicy()
    if name == "rotating":
        return rotating_policy(config, schedule)
    raise ConfigurationError(f"unknown trajectory policy {name!r}")


# -- random sources and streams ---------------------------------------------


@dataclass
class TrialRng:
    noise: np.random.Generator
    trajectory: np.random.Generator
    seed: tuple[int, int] = field(default=(0, 0))

    @classmethod
    def from_seed(cls, master_seed: int, trial: int = 0) -> "TrialRng":
        noise_ss, traj_ss = np.random.SeedSequence([int(master_seed), int(trial)]).spawn(2)
        return cls(
            np.random.Generator(np.random.PCG64(noise_ss)),
            np.random.Generator(np.random.PCG64(traj_ss)),
            (int(master_seed), int(trial)),
        )


def _as_trial_rng(rng) -> TrialRng:
    if isinstance(rng, TrialRng):
        return rng
    return TrialRng.from_seed(int(rng))


@dataclass(frozen=True)
class Observation:
    k: int
    values: np.ndarray
    phase: int
    affected: tuple[int, ...]


def _compose(pair, config, schedule, policy, k, z, keys) -> Observation:
    phase = phase_at(schedule, k)
    size = anomaly_size(config, phase)
    mask = policy.mask(k, size, config.L, keys)
    x = np.where(mask, pair.post.from_standard(z), pair.pre.from_standard(z))
    return Observation(k, x, phase, tuple(int(i) for i in np.flatnonzero(mask)))


def gen_observation(pair: DensityPair, config: NetworkConfig, schedule: PhaseSchedule,
                    policy, k: int, rng) -> Observation:
    """Draw X[k]; consumes one time step from ``rng``."""
    rng = _as_trial_rng(rng)
    schedule.check(config)
    z = rng.noise.standard_normal(config.L)
    keys = rng.trajectory.random(config.L) if policy.needs_keys else None
    return _compose(pair, config, schedule, policy, k, z, keys)


def gen_stream(pair: DensityPair, config: NetworkConfig, schedule: PhaseSchedule,
               policy, rng) -> Iterator[Observation]:
    """Unbounded lazy stream X[1], X[2], ..."""
    rng = _as_trial_rng(rng)
    schedule.check(config)
    k = 0
    while True:
        k += 1
        yield gen_observation(pair, config, schedule, policy, k, rng)


# -- CSV dump ---------------------------------------------------------------


def stream_header(L: int) -> list[str]:
    return ["k"] + [f"x_{i + 1}" for i in range(L)] + ["phase", "affected_set"]


def format_observation(obs: Observation) -> list[str]:
    return (
        [str(obs.k)]
        + [repr(float(v)) for v in obs.values]
        + [str(obs.phase), ";".join(str(i + 1) for i in obs.affected)]
    )


def write_stream_csv(observations, L: int, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(stream_header(L))
    for obs in observations:
        w.writerow(format_observation(obs))


def read_stream_csv(fh) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (k, values) from a stream CSV, ignoring any label columns."""
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        return
    header = [h.strip() for h in header]
    if not header or header[0] != "k":
        raise ConfigurationError("stream CSV must start with a 'k' column")
    cols = [i for i, h in enumerate(header) if h.startswith("x_")]
    if not cols:
        raise ConfigurationError("stream CSV has no x_* columns")
    for row in reader:
        if not row:
            continue
        yield int(row[0]), np.array([float(row[i]) for i in cols])


def stream_to_csv_text(observations, L: int) -> str:
    buf = io.StringIO()
    write_stream_csv(observations, L, buf)
    return buf.getvalue()
