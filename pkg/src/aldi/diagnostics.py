"""Time-averaged run metrics and moment/subspace diagnostics.

The bias and spread metrics are left Riemann sums over the recorded snapshots
inside a time window, normalised by the window length.  The spread carries an
additional factor of the PDE mesh width, turning the covariance trace into a
discrete integral of the pointwise variance over the domain; the bias is the
plain time-averaged squared Euclidean error of the ensemble mean, which is the
normalisation the benchmark's reference values follow.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .ensemble import ParticleEnsemble
from .samplers import RunRecord


@dataclass(frozen=True)
class WindowSpec:
    """Averaging window [tau, tau + horizon) and the mesh width entering the spread."""

    tau: float = 12.0
    horizon: float = 8.0
    mesh_h: float = 2.0 * np.pi / 50

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")


def _window_snapshots(record: RunRecord, window: WindowSpec):
    """Snapshots with tau <= t < tau + horizon, plus the uniform spacing dt."""
    t_end = window.tau + window.horizon
    times = record.times
    if times[0] > window.tau + 1e-12 or times[-1] < t_end - 1e-12:
        raise ValueError(
            f"record spans [{times[0]}, {times[-1]}] but the window needs "
            f"[{window.tau}, {t_end}]"
        )
    picked = [(t, ens) for t, ens in record.snapshots if window.tau - 1e-12 <= t < t_end - 1e-12]
    if len(picked) < 1:
        raise ValueError("no snapshots inside the metric window")
    if len(picked) > 1:
        gaps = np.diff([t for t, _ in picked])
        dt = gaps[0]
        if np.max(np.abs(gaps - dt)) > 1e-9 * max(dt, 1.0):
            raise ValueError("snapshots are not uniformly spaced inside the window")
    else:
        dt = window.horizon
    return picked, float(dt)


def bias(record: RunRecord, truth: np.ndarray, window: WindowSpec) -> float:
    """Time-averaged squared Euclidean distance of the ensemble mean from the truth."""
    truth = np.asarray(truth, dtype=float)
    picked, dt = _window_snapshots(record, window)
    total = 0.0
    for _, ens in picked:
        diff = ens.states.mean(axis=1) - truth
        total += float(diff @ diff) * dt
    return total / window.horizon


def spread(record: RunRecord, window: WindowSpec) -> float:
    """Time-averaged trace of the ensemble covariance, scaled by h."""
    picked, dt = _window_snapshots(record, window)
    total = 0.0
    for _, ens in picked:
        dev = ens.states - ens.states.mean(axis=1, keepdims=True)
        total += float(np.sum(dev * dev)) / ens.dim_n * dt
    return window.mesh_h / window.horizon * total


def pooled_moments(record: RunRecord, burn_in_time: float) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and covariance pooled over particles and post-burn-in snapshots (1/count)."""
    final_time = record.snapshots[-1][0]
    if burn_in_time >= final_time and len(record.snapshots) > 1:
        raise ValueError(
            f"burn_in_time {burn_in_time} must be before the final time {final_time}"
        )
    cols = [ens.states for t, ens in record.snapshots if t >= burn_in_time]
    if not cols:
        raise ValueError("no snapshots after the burn-in time")
    pooled = np.concatenate(cols, axis=1)
    mean = pooled.mean(axis=1)
    dev = pooled - mean[:, None]
    cov = dev @ dev.T / pooled.shape[1]
    return mean, cov


def subspace_residual(
    ens: ParticleEnsemble, basis: np.ndarray, anchor: np.ndarray
) -> float:
    """Largest distance of any particle from the affine subspace anchor + span(basis)."""
    basis = np.asarray(basis, dtype=float)
    anchor = np.asarray(anchor, dtype=float)
    if basis.ndim != 2 or basis.shape[0] != ens.dim_d:
        raise ValueError(f"basis must have shape ({ens.dim_d}, r), got {basis.shape}")
    gram = basis.T @ basis
    if np.max(np.abs(gram - np.eye(basis.shape[1]))) > 1e-10:
        raise ValueError("basis columns are not orthonormal")
    centred = ens.states - anchor[:, None]
    residual = centred - basis @ (basis.T @ centred)
    return float(np.max(np.linalg.norm(residual, axis=0)))
