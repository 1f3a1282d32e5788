"""Mixture-WD-CuSum: quickest detection of a growing, moving anomaly in a sensor network."""

__version__ = "0.1.0"

from .distributions import ConfigurationError, DensityPair, Gaussian, standard_pair
from .model import (FixedPolicy, NetworkConfig, PhaseSchedule, PrefixPolicy, TrialRng,
                    UniformPolicy, anomaly_size, gen_observation, gen_stream, phase_at,
                    rotating_policy)
from .mixture import estimate_kl, mixture_llr, phase_llrs
from .detector import (AlarmDecision, DetectorParams, DetectorState, default_params, init_state,
                       run_until_stop, step, update)

__all__ = [
    "ConfigurationError", "DensityPair", "Gaussian", "standard_pair",
    "FixedPolicy", "NetworkConfig", "PhaseSchedule", "PrefixPolicy", "TrialRng", "UniformPolicy",
    "anomaly_size", "gen_observation", "gen_stream", "phase_at", "rotating_policy",
    "estimate_kl", "mixture_llr", "phase_llrs",
    "AlarmDecision", "DetectorParams", "DetectorState", "default_params", "init_state",
    "run_until_stop", "step", "update",
]
