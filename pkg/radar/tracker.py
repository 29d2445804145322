"""Linear-Gaussian target driven by the probe, tracked by one Kalman filter per radar.

State noise covariance is scale * diag(alpha_n); radar i measures with noise
covariance diag(1 / beta_n^i), so a larger allocation means a sharper sensor.
A radar allocated no power at step n takes no measurement and only predicts.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from filterpy.kalman import KalmanFilter

from config import MIN_RADAR_POWER
from revealed.dataset import Probe

logger = logging.getLogger(__name__)


class NonPositiveDefiniteError(ValueError):
    pass


def _require_positive_definite(matrix: np.ndarray, name: str) -> None:
    try:
        np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as e:
        raise NonPositiveDefiniteError(f"{name} is not positive definite") from e


@dataclass(frozen=True)
class TargetModel:
    A: np.ndarray
    C_obs: np.ndarray
    process_noise_scale: float = 1.0
    x0: np.ndarray | None = None
    P0: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        C_obs = np.atleast_2d(np.array(self.C_obs, dtype=float))
        if C_obs.shape[1] != n:
            raise ValueError(f"C_obs has {C_obs.shape[1]} columns for a state of size {n}")
        if self.process_noise_scale < 0:
            raise NonPositiveDefiniteError(f"process noise scale must be >= 0, got {self.process_noise_scale}")
        x0 = np.zeros(n) if self.x0 is None else np.array(self.x0, dtype=float)
        P0 = np.eye(n) if self.P0 is None else np.array(self.P0, dtype=float)
        _require_positive_definite(P0, "initial covariance")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C_obs", C_obs)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "P0", P0)

    @classmethod
    def identity(cls, n: int, process_noise_scale: float = 1.0) -> "TargetModel":
        return cls(np.eye(n), np.eye(n), process_noise_scale)

    @property
    def dim_x(self) -> int:
        return self.A.shape[0]

    @property
    def dim_z(self) -> int:
        return self.C_obs.shape[0]

    def process_noise(self, alpha: np.ndarray) -> np.ndarray:
        if np.any(alpha <= 0):
            raise NonPositiveDefiniteError(f"probe {alpha.tolist()} gives a singular state noise")
        return self.process_noise_scale * np.diag(alpha)

    def measurement_noise(self, beta: np.ndarray) -> np.ndarray:
        """diag(1 / beta), with components below MIN_RADAR_POWER floored to it."""
        if np.any(beta < 0):
            raise NonPositiveDefiniteError(f"allocation {beta.tolist()} has negative power")
        return np.diag(1.0 / np.maximum(beta, MIN_RADAR_POWER))


@dataclass(frozen=True)
class TrackResult:
    """states[n], measurements[n, i], means[n, i], covariances[n, i], innovations[n, i], ..."""

    states: np.ndarray
    measurements: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    innovations: np.ndarray
    innovation_covariances: np.ndarray


def _new_filter(model: TargetModel) -> KalmanFilter:
    kf = KalmanFilter(dim_x=model.dim_x, dim_z=model.dim_z)
    kf.x = model.x0.copy()
    kf.P = model.P0.copy()
    kf.F = model.A
    kf.H = model.C_obs
    return kf


def track(model: TargetModel, probes, allocations, seed) -> TrackResult:
    """Simulate the target for len(probes) steps and filter each radar's measurements."""
    alphas = np.array([p.alpha if isinstance(p, Probe) else np.asarray(p, dtype=float) for p in probes])
    allocations = np.asarray(allocations, dtype=float)
    T = alphas.shape[0]
    if allocations.ndim != 3 or allocations.shape[0] != T:
        raise ValueError(f"allocations must be T x M x N with T={T}, got {allocations.shape}")
    M = allocations.shape[1]
    if alphas.shape[1] != model.dim_x or allocations.shape[2] != model.dim_z:
        raise ValueError("probe and allocation dimensions must match the state and measurement sizes")

    rng = np.random.default_rng(seed)
    filters = [_new_filter(model) for _ in range(M)]
    x = rng.multivariate_normal(model.x0, model.P0)

    states = np.zeros((T, model.dim_x))
    measurements = np.zeros((T, M, model.dim_z))
    means = np.zeros((T, M, model.dim_x))
    covariances = np.zeros((T, M, model.dim_x, model.dim_x))
    innovations = np.zeros((T, M, model.dim_z))
    innovation_covariances = np.zeros((T, M, model.dim_z, model.dim_z))

    for n in range(T):
        Q = model.process_noise(alphas[n])
        x = model.A @ x + np.sqrt(np.diag(Q)) * rng.standard_normal(model.dim_x)
        states[n] = x
        for i, kf in enumerate(filters):
            R = model.measurement_noise(allocations[n, i])
            z = model.C_obs @ x + np.sqrt(np.diag(R)) * rng.standard_normal(model.dim_z)
            kf.predict(Q=Q)
            if np.any(allocations[n, i] > 0):
                kf.update(z, R=R)
                measurements[n, i] = z
                innovations[n, i] = kf.y
                innovation_covariances[n, i] = kf.S
            else:
                kf.update(None)
                measurements[n, i] = np.nan
                innovation_covariances[n, i] = np.nan
            means[n, i] = kf.x
            covariances[n, i] = kf.P

    logger.debug("Tracked %d steps for %d radars", T, M)
    return TrackResult(states, measurements, means, covariances, innovations, innovation_covariances)


def track_frame(result: TrackResult) -> pd.DataFrame:
    """Long table, one row per (n, radar): state, measurement, posterior mean and variances."""
    T, M, dim_x = result.means.shape
    dim_z = result.measurements.shape[2]
    columns = {
        "n": np.repeat(np.arange(1, T + 1), M),
        "radar": np.tile(np.arange(1, M + 1), T),
    }
    for k in range(dim_x):
        columns[f"state_{k + 1}"] = np.repeat(result.states[:, k], M)
    for k in range(dim_z):
        columns[f"measurement_{k + 1}"] = result.measurements[:, :, k].ravel()
    for k in range(dim_x):
        columns[f"mean_{k + 1}"] = result.means[:, :, k].ravel()
    for k in range(dim_x):
        columns[f"variance_{k + 1}"] = result.covariances[:, :, k, k].ravel()
    for k in range(dim_z):
        columns[f"innovation_{k + 1}"] = result.innovations[:, :, k].ravel()
    return pd.DataFrame(columns)


def write_track(result: TrackResult, path: str) -> None:
    track_frame(result).to_csv(path, index=False, float_format="%.17g")
    logger.info("Wrote %d tracked steps to %s", result.states.shape[0], path)
