"""Kinetic Langevin Monte Carlo: samplers, shifted couplings and bound calculators."""

from .errors import (CertificationError, ConfigError, DivergenceError, KinlmcError, NumericalError,
                     PrecisionWarning, RangeError, RegimeError, StepSizeWarning, TruncationWarning)
from .kernels import ChainConfig, ChainResult, GaussianMoments, KernelKind, PhaseState, run_chain
from .potentials import Potential, make_gaussian, make_quadratic, potential_from_config

__version__ = "0.1.0"

__all__ = [
    "CertificationError", "ChainConfig", "ChainResult", "ConfigError", "DivergenceError", "GaussianMoments",
    "KernelKind", "KinlmcError", "NumericalError", "PhaseState", "Potential", "PrecisionWarning", "RangeError",
    "RegimeError", "StepSizeWarning", "TruncationWarning", "make_gaussian", "make_quadratic",
    "potential_from_config", "run_chain",
]
