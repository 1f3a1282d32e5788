"""Pre/post-change density models and per-sensor log-likelihood ratios.

Everything is kept in the natural-log domain. Only the Gaussian family is
provided; a new family needs ``log_pdf``, ``sample`` and ``from_standard``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class ConfigurationError(ValueError):
    """Raised for inconsistent model, network or detector settings."""


@dataclass(frozen=True)
class Gaussian:
    mean: float
    variance: float

    kind = "gaussian"

    def __post_init__(self):
        if not self.variance > 0 or not math.isfinite(self.variance):
            raise ConfigurationError(f"variance must be positive, got {self.variance}")
        if not math.isfinite(self.mean):
            raise ConfigurationError(f"mean must be finite, got {self.mean}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        z = x - self.mean
        return -0.5 * z * z / self.variance - _LOG_SQRT_2PI - 0.5 * math.log(self.variance)

    def from_standard(self, z):
        """Map standard-normal draws onto this density.

        Generators draw one standard normal per sensor and time step whether
        or not the sensor is affected, so the pre- and post-change variates
        share the same underlying noise.
        """
        return self.mean + self.std * np.asarray(z, dtype=float)

    def sample(self, rng: np.random.Generator, size=None):
        return self.from_standard(rng.standard_normal(size))


DensityModel = Gaussian


def log_pdf(model: DensityModel, x):
    return model.log_pdf(x)


def sample(model: DensityModel, rng: np.random.Generator, size=None):
    return model.sample(rng, size)


@dataclass(frozen=True)
class DensityPair:
    """Homogeneous pre-change ``pre`` (g) and post-change ``post`` (f) densities."""

    pre: DensityModel
    post: DensityModel

    def __post_init__(self):
        if self.pre == self.post:
            raise ConfigurationError("pre- and post-change densities coincide (zero KL)")

    @classmethod
    def unchecked(cls, pre: DensityModel, post: DensityModel) -> "DensityPair":
        # Test hook: bypasses the distinct-densities guard.
        obj = object.__new__(cls)
        object.__setattr__(obj, "pre", pre)
        object.__setattr__(obj, "post", post)
        return obj

    def llr(self, x):
        """Componentwise log f(x) - log g(x); works on any array shape."""
        return self.post.log_pdf(x) - self.pre.log_pdf(x)

    def kl_per_sensor(self) -> float:
        """KL(f || g) of a single sensor (closed form, Gaussian)."""
        f, g = self.post, self.pre
        return 0.5 * (
            math.log(g.variance / f.variance)
            + (f.variance + (f.mean - g.mean) ** 2) / g.variance
            - 1.0
        )


def per_sensor_llr(pair: DensityPair, x) -> np.ndarray:
    return pair.llr(x)


def standard_pair() -> DensityPair:
    """g = N(0, 1), f = N(1, 1)."""
    return DensityPair(Gaussian(0.0, 1.0), Gaussian(1.0, 1.0))
