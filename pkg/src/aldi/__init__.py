"""Affine-invariant interacting-particle Langevin samplers (ALDI and relatives)
with ensemble Kalman variants and a PDE-constrained inversion benchmark."""

from .ensemble import (
    AffineMap,
    EnsembleStats,
    ParticleEnsemble,
    apply_affine,
    cross_covariance,
    empirical_mean,
    empirical_stats,
    min_eigenvalue_sym,
)
from .samplers import (
    ConfigurationError,
    DivergenceError,
    RunRecord,
    SamplerConfig,
    run,
    step,
)
from .targets import (
    GaussianInverseProblem,
    TargetDensity,
    bip_target,
    gaussian_target,
    misfit,
)

__all__ = [
    "AffineMap",
    "ConfigurationError",
    "DivergenceError",
    "EnsembleStats",
    "GaussianInverseProblem",
    "ParticleEnsemble",
    "RunRecord",
    "SamplerConfig",
    "TargetDensity",
    "apply_affine",
    "bip_target",
    "cross_covariance",
    "empirical_mean",
    "empirical_stats",
    "gaussian_target",
    "min_eigenvalue_sym",
    "misfit",
    "run",
    "step",
]

__version__ = "0.1.0"
