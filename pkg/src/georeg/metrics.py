"""Geopositioning error statistics for registered camera sets.

Absolute error is the Euclidean distance between estimated and true camera
positions in the local metric frame. Relative error subtracts the mean
error vector first (satellite reference products are predominantly biased
by a translation), isolating the non-systematic part. The mean error is
also scored against the reference DSM's covariance as a Mahalanobis
distance, and horizontal/vertical 90th-percentile errors (CE90/LE90) are
reported alongside.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateInput, ShapeMismatch, SingularCovariance
from .raster import DsmCovariance

__all__ = ["RegistrationReport", "evaluate", "normalize_by_standoff"]


@dataclass(frozen=True)
class RegistrationReport:
    """Per-camera ENU error vectors and their summary statistics."""

    camera_count: int
    errors_enu_m: np.ndarray
    mean_absolute_error_m: float
    mean_relative_error_m: float
    median_relative_error_m: float
    mahalanobis_distance: float
    per_camera_mahalanobis: np.ndarray
    ce90_m: float
    le90_m: float
    inlier_fraction: float | None = None

    def to_dict(self) -> dict:
        return {
            "camera_count": self.camera_count,
            "errors_enu_m": self.errors_enu_m.tolist(),
            "mean_absolute_error_m": self.mean_absolute_error_m,
            "mean_relative_error_m": self.mean_relative_error_m,
            "median_relative_error_m": self.median_relative_error_m,
            "mahalanobis_distance": self.mahalanobis_distance,
            "per_camera_mahalanobis": self.per_camera_mahalanobis.tolist(),
            "ce90_m": self.ce90_m,
            "le90_m": self.le90_m,
            "inlier_fraction": self.inlier_fraction,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def evaluate(estimated, truth, cov: DsmCovariance,
             inlier_fraction: float | None = None) -> RegistrationReport:
    """Score estimated camera positions against ground truth.

    Both inputs are (N, 3) positions in the same local ENU frame. The
    Mahalanobis distance is computed on the mean error vector (how likely
    the observed bias is under the DSM's uncertainty); per-camera distances
    are included for diagnostics. CE90/LE90 are 90th percentiles (linear
    interpolation between order statistics) of the raw horizontal
    magnitudes and absolute vertical errors.
    """
    est = np.asarray(estimated, dtype=np.float64).reshape(-1, 3)
    tru = np.asarray(truth, dtype=np.float64).reshape(-1, 3)
    if est.shape != tru.shape:
        raise ShapeMismatch(f"estimated {est.shape} vs truth {tru.shape}")
    if len(est) == 0:
        raise ShapeMismatch("need at least one camera")

    errors = est - tru
    norms = np.linalg.norm(errors, axis=1)
    mean_error = errors.mean(axis=0)
    relative = np.linalg.norm(errors - mean_error, axis=1)

    try:
        solved = np.linalg.solve(cov.sigma, errors.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(str(exc)) from exc
    per_camera = np.sqrt(np.einsum("ij,ij->i", errors, solved))
    mean_solved = np.linalg.solve(cov.sigma, mean_error)
    mahalanobis = float(np.sqrt(mean_error @ mean_solved))

    horizontal = np.hypot(errors[:, 0], errors[:, 1])
    return RegistrationReport(
        camera_count=len(est),
        errors_enu_m=errors,
        mean_absolute_error_m=float(norms.mean()),
        mean_relative_error_m=float(relative.mean()),
        median_relative_error_m=float(np.median(relative)),
        mahalanobis_distance=mahalanobis,
        per_camera_mahalanobis=per_camera,
        ce90_m=float(np.percentile(horizontal, 90)),
        le90_m=float(np.percentile(np.abs(errors[:, 2]), 90)),
        inlier_fraction=inlier_fraction,
    )


def normalize_by_standoff(report: RegistrationReport,
                          mean_standoff_m: float) -> float:
    """Relative error per meter of sensor standoff distance."""
    if mean_standoff_m <= 0:
        raise DegenerateInput("standoff distance must be > 0")
    return report.mean_relative_error_m / mean_standoff_m
