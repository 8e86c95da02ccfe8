"""Particle ensemble container and shared empirical statistics.

All samplers operate on a ``D x N`` matrix of particle states (column i is
particle i).  This module collects the statistics they share: empirical mean,
deviations, covariance with the 1/N convention, the generalised non-symmetric
square root, cross-covariances against forward-map images, affine maps of
ensembles, and a robust smallest-eigenvalue monitor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ParticleEnsemble:
    """Immutable collection of N particles in R^D, stored column-wise."""

    states: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2:
            raise ValueError(f"states must be a 2-d array, got shape {states.shape}")
        if states.shape[0] < 1 or states.shape[1] < 1:
            raise ValueError(f"states must be at least 1x1, got shape {states.shape}")
        if not np.all(np.isfinite(states)):
            raise ValueError("ensemble states contain non-finite entries")
        object.__setattr__(self, "states", states)

    @property
    def dim_d(self) -> int:
        return self.states.shape[0]

    @property
    def dim_n(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class EnsembleStats:
    """Empirical statistics of one ensemble snapshot.

    ``covariance`` uses the 1/N convention (not 1/(N-1)); the correction-term
    coefficient (D+1)/N in the sampler drift is tied to this choice.
    ``sqrt_factor`` is the generalised D x N square root: deviations / sqrt(N),
    satisfying covariance = sqrt_factor @ sqrt_factor.T without any matrix
    factorisation.
    """

    mean: np.ndarray
    deviations: np.ndarray
    covariance: np.ndarray
    sqrt_factor: np.ndarray


@dataclass(frozen=True)
class AffineMap:
    """Invertible affine change of coordinates u = M v + b."""

    matrix: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float)
        shift = np.asarray(self.shift, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"matrix must be square, got shape {matrix.shape}")
        if shift.shape != (matrix.shape[0],):
            raise ValueError(
                f"shift length {shift.shape} does not match matrix size {matrix.shape[0]}"
            )
        sign, logdet = np.linalg.slogdet(matrix)
        if sign == 0 or not np.isfinite(logdet):
            raise ValueError("affine map matrix is singular")
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "shift", shift)

    def inverse(self) -> "AffineMap":
        inv = np.linalg.inv(self.matrix)
        return AffineMap(inv, -inv @ self.shift)


def empirical_mean(ens: ParticleEnsemble) -> np.ndarray:
    """Mean of the particle positions, length D."""
    return ens.states.mean(axis=1)


def empirical_stats(ens: ParticleEnsemble) -> EnsembleStats:
    """Mean, deviations, 1/N covariance and generalised square root of one snapshot."""
    mean = ens.states.mean(axis=1)
    deviations = ens.states - mean[:, None]
    n = ens.dim_n
    sqrt_factor = deviations / np.sqrt(n)
    covariance = sqrt_factor @ sqrt_factor.T
    return EnsembleStats(
        mean=mean, deviations=deviations, covariance=covariance, sqrt_factor=sqrt_factor
    )


def cross_covariance(ens: ParticleEnsemble, images: np.ndarray) -> np.ndarray:
    """Empirical cross-covariance between particles and their K-dim images.

    ``images`` column j is the image of particle j under the forward map.
    Returns the D x K matrix (1/N) sum_i (u_i - m)(g_i - m_g)^T.
    """
    images = np.asarray(images, dtype=float)
    if images.ndim != 2 or images.shape[1] != ens.dim_n:
        raise ValueError(
            f"images must have shape (K, {ens.dim_n}), got {images.shape}"
        )
    dev_u = ens.states - ens.states.mean(axis=1, keepdims=True)
    dev_g = images - images.mean(axis=1, keepdims=True)
    return dev_u @ dev_g.T / ens.dim_n


def apply_affine(ens: ParticleEnsemble, amap: AffineMap) -> ParticleEnsemble:
    """Map every particle through u -> M u + b."""
    if amap.matrix.shape[0] != ens.dim_d:
        raise ValueError(
            f"map dimension {amap.matrix.shape[0]} does not match ensemble dimension {ens.dim_d}"
        )
    return ParticleEnsemble(amap.matrix @ ens.states + amap.shift[:, None])


def min_eigenvalue_sym(mat: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix via full eigendecomposition.

    Rejects inputs whose asymmetry exceeds 1e-8 relative to the largest entry.
    Full dense eigendecomposition is deliberate: robust at the D <= 512 sizes
    this package targets.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    scale = np.max(np.abs(mat))
    if scale > 0 and np.max(np.abs(mat - mat.T)) > 1e-8 * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    return float(np.linalg.eigvalsh(mat)[0])
