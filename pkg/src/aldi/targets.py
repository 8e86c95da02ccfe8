"""Target densities and Gaussian-noise inverse problems.

A target is represented by its negative log-density (potential) up to an
additive constant; the normalisation constant is never computed.  Two concrete
families are provided: multivariate Gaussians (mainly for testing, and the one
family carrying ergodicity guarantees out of the box, since its potential has
quadratic growth) and Bayesian inverse problems with a nonlinear forward map,
additive Gaussian noise and a Gaussian prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class EvaluationError(RuntimeError):
    """A potential/forward evaluation produced non-finite values."""


@dataclass(frozen=True)
class TargetDensity:
    """Potential Phi with optional gradient; defines a sampling problem.

    ``gradient`` may be absent for black-box targets; samplers that need it
    fail fast.  ``gradient_batch`` optionally evaluates gradients for all
    columns of a D x N matrix at once (used by the drivers when available,
    purely for speed; it must agree column-wise with ``gradient``).
    """

    dim: int
    potential: Callable[[np.ndarray], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    gradient_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def gradient_columns(self, states: np.ndarray) -> np.ndarray:
        """Gradient at each column of a D x N matrix, as a D x N matrix."""
        if self.gradient is None:
            raise ValueError("target has no gradient")
        if self.gradient_batch is not None:
            return np.asarray(self.gradient_batch(states), dtype=float)
        out = np.empty_like(states)
        for i in range(states.shape[1]):
            out[:, i] = self.gradient(states[:, i])
        return out


def _check_spd(mat: np.ndarray, name: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square, got shape {mat.shape}")
    if np.max(np.abs(mat - mat.T)) > 1e-10 * max(1.0, np.max(np.abs(mat))):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(mat)[0] <= 0:
        raise ValueError(f"{name} must be positive definite")
    return mat


@dataclass
class GaussianInverseProblem:
    """Bayesian inverse problem y = G(u) + xi with Gaussian noise and prior.

    ``forward`` maps a length-D vector to a length-K vector.  ``noise_cov`` is
    the SPD noise covariance R, ``prior_precision`` the SPD prior precision.
    ``forward_gradient_adjoint(u, w)`` applies the transposed forward Jacobian
    to w; when absent the induced target carries no gradient and only
    gradient-free samplers apply.

    ``forward_batch`` and ``forward_gradient_adjoint_batch`` are optional
    column-wise vectorisations (D x N in, K x N / D x N out) used to keep the
    per-step cost of ensemble runs down; they must agree with the scalar
    versions.

    The action of R^{-1} is applied through a Cholesky factorisation cached at
    construction, never an explicit inverse.
    """

    forward: Callable[[np.ndarray], np.ndarray]
    noise_cov: np.ndarray
    obs: np.ndarray
    prior_mean: np.ndarray
    prior_precision: np.ndarray
    forward_gradient_adjoint: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    forward_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    forward_gradient_adjoint_batch: Optional[
        Callable[[np.ndarray, np.ndarray], np.ndarray]
    ] = None
    _noise_chol: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.noise_cov = _check_spd(self.noise_cov, "noise_cov")
        self.prior_precision = _check_spd(self.prior_precision, "prior_precision")
        self.obs = np.asarray(self.obs, dtype=float)
        self.prior_mean = np.asarray(self.prior_mean, dtype=float)
        if self.obs.shape != (self.noise_cov.shape[0],):
            raise ValueError("obs length does not match noise_cov")
        if self.prior_mean.shape != (self.prior_precision.shape[0],):
            raise ValueError("prior_mean length does not match prior_precision")
        self._noise_chol = cho_factor(self.noise_cov)

    @property
    def dim(self) -> int:
        return self.prior_mean.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.obs.shape[0]

    def apply_noise_precision(self, residual: np.ndarray) -> np.ndarray:
        """R^{-1} applied to a length-K vector or K x N matrix of residuals."""
        return cho_solve(self._noise_chol, residual)

    def forward_columns(self, states: np.ndarray) -> np.ndarray:
        """Forward map of each column of a D x N matrix, as a K x N matrix."""
        if self.forward_batch is not None:
            images = np.asarray(self.forward_batch(states), dtype=float)
        else:
            images = np.empty((self.obs_dim, states.shape[1]))
            for i in range(states.shape[1]):
                images[:, i] = self.forward(states[:, i])
        bad = ~np.all(np.isfinite(images), axis=0)
        if np.any(bad):
            raise EvaluationError(
                f"forward map returned non-finite values for particle(s) {np.flatnonzero(bad).tolist()}"
            )
        return images


def misfit(problem: GaussianInverseProblem, u: np.ndarray) -> float:
    """Least-squares data misfit (1/2)||y_obs - G(u)||^2 weighted by R^{-1}."""
    g = np.asarray(problem.forward(u), dtype=float)
    if not np.all(np.isfinite(g)):
        raise EvaluationError("forward map returned non-finite values")
    r = problem.obs - g
    return 0.5 * float(r @ problem.apply_noise_precision(r))


def bip_target(problem: GaussianInverseProblem) -> TargetDensity:
    """Posterior potential: data misfit plus Gaussian prior penalty.

    The gradient combines the adjoint action of the forward Jacobian on the
    weighted residual with the prior term, and is present only when the
    problem supplies ``forward_gradient_adjoint``.
    """

    def potential(u):
        du = u - problem.prior_mean
        return misfit(problem, u) + 0.5 * float(du @ problem.prior_precision @ du)

    gradient = None
    gradient_batch = None
    if problem.forward_gradient_adjoint is not None:
        def gradient(u):
            g = np.asarray(problem.forward(u), dtype=float)
            w = problem.apply_noise_precision(g - problem.obs)
            return problem.forward_gradient_adjoint(u, w) + problem.prior_precision @ (
                u - problem.prior_mean
            )

    if problem.forward_gradient_adjoint_batch is not None:
        def gradient_batch(states):
            images = problem.forward_columns(states)
            weights = problem.apply_noise_precision(images - problem.obs[:, None])
            misfit_grad = problem.forward_gradient_adjoint_batch(states, weights)
            return misfit_grad + problem.prior_precision @ (
                states - problem.prior_mean[:, None]
            )

    return TargetDensity(
        dim=problem.dim,
        potential=potential,
        gradient=gradient,
        gradient_batch=gradient_batch,
    )


def gaussian_target(mean: np.ndarray, precision: np.ndarray) -> TargetDensity:
    """Gaussian target with given mean and SPD precision matrix."""
    mean = np.asarray(mean, dtype=float)
    precision = _check_spd(precision, "precision")
    if mean.shape != (precision.shape[0],):
        raise ValueError("mean length does not match precision")

    def potential(u):
        du = u - mean
        return 0.5 * float(du @ precision @ du)

    def gradient(u):
        return precision @ (u - mean)

    # the hot loops call this once per step; precomputing precision @ mean
    # keeps it at two array operations (one for centred targets), and the
    # scalar case avoids the matrix product entirely
    if mean.any():
        shift = (precision @ mean)[:, None]

        def gradient_batch(states):
            return precision @ states - shift

    elif mean.size == 1:
        p00 = float(precision[0, 0])

        def gradient_batch(states):
            return p00 * states

    else:

        def gradient_batch(states):
            return precision @ states

    return TargetDensity(
        dim=mean.shape[0],
        potential=potential,
        gradient=gradient,
        gradient_batch=gradient_batch,
    )
