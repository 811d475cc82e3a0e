"""Up-vector recovery for reconstructions in arbitrary coordinate frames.

Reconstructed points observed at ground-labeled pixels are fit with a
RANSAC plane; the plane normal gives gravity up to sign, which is resolved
by requiring camera rays to hit the plane from above (most ray directions
make a negative dot product with the true up vector). The final product is
the rotation that sends the recovered up vector to +z.

Camera convention throughout: ``orientation`` is camera-to-world with
+z forward, +x right, +y down (image row direction).

Only the z axis is constrained by gravity: the aligned frame's azimuth is
whatever the minimal rotation leaves, and downstream oblique renders
inherit those residual x/y axes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    Ambiguous,
    DegenerateInput,
    NoIntersections,
    TooFewGroundPoints,
)
from .raster import Raster
from .transforms import (
    Sim3Transform,
    quat_wxyz_to_rotation,
    rotation_to_quat_wxyz,
)

__all__ = [
    "CameraPose",
    "PlaneModel",
    "GroundPointSet",
    "select_ground_points",
    "ransac_plane",
    "disambiguate_up",
    "z_up_rotation",
    "load_cameras",
    "save_cameras",
]


@dataclass(frozen=True)
class CameraPose:
    """Camera center and camera-to-world orientation in the model frame."""

    center: np.ndarray
    orientation: np.ndarray
    id: str = ""

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64).reshape(3)
        rot = np.asarray(self.orientation, dtype=np.float64)
        if rot.shape != (3, 3):
            raise DegenerateInput("orientation must be 3x3")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-9 or \
                abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise DegenerateInput("orientation must be a proper rotation")
        center.flags.writeable = False
        rot = rot.copy()
        rot.flags.writeable = False
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "orientation", rot)

    @classmethod
    def look_at(cls, eye, target, camera_id: str = "") -> "CameraPose":
        """Pose at ``eye`` with +z toward ``target``; +x is picked level."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        norm = np.linalg.norm(forward)
        if norm == 0:
            raise DegenerateInput("look_at target coincides with eye")
        forward = forward / norm
        x_axis = np.cross(forward, [0.0, 0.0, 1.0])
        x_norm = np.linalg.norm(x_axis)
        if x_norm < 1e-12:
            x_axis = np.array([1.0, 0.0, 0.0])   # straight up/down: pick east
        else:
            x_axis = x_axis / x_norm
        y_axis = np.cross(forward, x_axis)
        return cls(eye, np.stack([x_axis, y_axis, forward], axis=1), camera_id)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "center_xyz": self.center.tolist(),
            "rotation_quaternion_wxyz": rotation_to_quat_wxyz(self.orientation).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(
            np.asarray(d["center_xyz"], dtype=np.float64),
            quat_wxyz_to_rotation(np.asarray(d["rotation_quaternion_wxyz"])),
            d.get("id", ""),
        )


def load_cameras(path) -> list[CameraPose]:
    return [CameraPose.from_dict(d) for d in json.loads(Path(path).read_text())]


def save_cameras(cameras: list[CameraPose], path) -> None:
    Path(path).write_text(
        json.dumps([c.to_dict() for c in cameras], indent=2) + "\n")


@dataclass(frozen=True)
class PlaneModel:
    """Plane {p : normal . p = offset} with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(normal)
        if abs(norm - 1.0) > 1e-12:
            raise DegenerateInput("plane normal must be unit length within 1e-12")
        normal.flags.writeable = False
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))

    def distances(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.abs(pts @ self.normal - self.offset)

    def flipped(self) -> "PlaneModel":
        return PlaneModel(-self.normal, -self.offset)


@dataclass(frozen=True)
class GroundPointSet:
    """3D points whose image observations fall on ground-labeled pixels."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


def select_ground_points(points, masks: dict[str, Raster],
                         min_ground_fraction: float = 0.5) -> GroundPointSet:
    """Keep 3D points mostly observed at ground-mask pixels.

    ``points`` is a sequence of (xyz, observations) where each observation
    is (image_id, row, col). An observation counts as ground when the
    nearest mask pixel of its image equals 1; missing masks, out-of-bounds
    positions, and nodata count against the fraction.

    Raises TooFewGroundPoints when fewer than 3 points survive.
    """
    kept = []
    for xyz, observations in points:
        if not observations:
            continue
        ground = 0
        for image_id, row, col in observations:
            mask = masks.get(image_id)
            if mask is None:
                continue
            r = int(round(row))
            c = int(round(col))
            if not (0 <= r < mask.height and 0 <= c < mask.width):
                continue
            value = float(mask.data[r, c, 0])
            if mask.nodata_value is not None and value == mask.nodata_value:
                continue
            if value == 1.0:
                ground += 1
        if ground / len(observations) >= min_ground_fraction:
            kept.append(np.asarray(xyz, dtype=np.float64))
    if len(kept) < 3:
        raise TooFewGroundPoints(
            f"only {len(kept)} ground points selected; need 3")
    return GroundPointSet(np.stack(kept))


def _fit_plane_least_squares(points: np.ndarray) -> tuple[np.ndarray, float]:
    centroid = points.mean(axis=0)
    centered = points - centroid
    _, vals, vecs = np.linalg.svd(centered, full_matrices=False)
    if len(vals) < 2 or vals[1] <= 1e-12 * max(vals[0], 1e-300):
        raise DegenerateInput("points are collinear; plane is unconstrained")
    normal = vecs[-1]
    return normal, float(normal @ centroid)


def ransac_plane(gp: GroundPointSet, inlier_threshold: float | None = None,
                 iterations: int = 1000,
                 seed: int = 0) -> tuple[PlaneModel, np.ndarray]:
    """Robust plane fit; returns the model and its inlier mask.

    When ``inlier_threshold`` is None it defaults to 1% of the point
    cloud's bounding-box diagonal (the model frame has no known scale).
    Sample for iteration i comes from default_rng([seed, i]); the winning
    consensus set is refit by least squares (smallest singular vector of
    the centered points) and the mask re-evaluated under the refit plane.
    """
    pts = gp.points
    n = len(pts)
    if n < 3:
        raise DegenerateInput(f"need at least 3 points, got {n}")
    if inlier_threshold is None:
        diagonal = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
        if diagonal == 0:
            raise DegenerateInput("all points coincide")
        inlier_threshold = 0.01 * diagonal
    if inlier_threshold <= 0:
        raise DegenerateInput("inlier_threshold must be > 0")

    best_count = 0
    best_res_sum = np.inf
    best_plane: PlaneModel | None = None
    best_mask: np.ndarray | None = None
    for iteration in range(iterations):
        idx = np.random.default_rng([seed, iteration]).choice(n, 3, replace=False)
        a, b, c = pts[idx]
        normal = np.cross(b - a, c - a)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal = normal / norm
        plane = PlaneModel(normal, float(normal @ a))
        residuals = plane.distances(pts)
        mask = residuals < inlier_threshold
        count = int(mask.sum())
        res_sum = float(residuals[mask].sum())
        if count > best_count or (count == best_count and res_sum < best_res_sum):
            best_count, best_res_sum = count, res_sum
            best_plane, best_mask = plane, mask

    if best_plane is None:
        raise DegenerateInput("no non-collinear sample found; points are collinear")

    try:
        normal, offset = _fit_plane_least_squares(pts[best_mask])
    except DegenerateInput:
        return best_plane, best_mask
    if normal @ best_plane.normal < 0:
        normal, offset = -normal, -offset
    plane = PlaneModel(normal, offset)
    return plane, plane.distances(pts) < inlier_threshold


def _ray_directions(camera: CameraPose, sample_rays: int, fov_deg: float,
                    seed: int) -> np.ndarray:
    half_tan = math.tan(math.radians(fov_deg) / 2.0)
    grid = math.isqrt(sample_rays)
    if grid * grid == sample_rays:
        ts = np.linspace(-half_tan, half_tan, grid) if grid > 1 else np.zeros(1)
        tx, ty = np.meshgrid(ts, ts)
        tx, ty = tx.reshape(-1), ty.reshape(-1)
    else:
        rng = np.random.default_rng(seed)
        tx = rng.uniform(-half_tan, half_tan, sample_rays)
        ty = rng.uniform(-half_tan, half_tan, sample_rays)
    dirs = np.stack([tx, ty, np.ones_like(tx)], axis=1)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs @ camera.orientation.T


def disambiguate_up(plane: PlaneModel, cameras: list[CameraPose],
                    sample_rays: int = 25, seed: int = 0,
                    fov_deg: float = 60.0) -> np.ndarray:
    """Resolve the plane-normal sign so it points away from the cameras.

    Rays are cast through each camera's field of view (a regular grid when
    sample_rays is a perfect square, seeded uniform directions otherwise).
    Rays that hit the plane in front of the camera vote: a direction with
    negative dot product against a normal means that normal faces the
    camera side, i.e. up.

    Raises NoIntersections when no ray hits the plane and Ambiguous on an
    exact vote tie.
    """
    if not cameras:
        raise DegenerateInput("need at least one camera")
    votes_up = 0
    votes_down = 0
    for camera in cameras:
        dirs = _ray_directions(camera, sample_rays, fov_deg, seed)
        denom = dirs @ plane.normal
        t = np.full(len(dirs), -1.0)
        nonparallel = np.abs(denom) > 1e-15
        t[nonparallel] = (plane.offset - camera.center @ plane.normal) \
            / denom[nonparallel]
        hits = nonparallel & (t > 0)
        votes_up += int(np.count_nonzero(denom[hits] < 0))
        votes_down += int(np.count_nonzero(denom[hits] > 0))
    if votes_up == 0 and votes_down == 0:
        raise NoIntersections("no sampled camera ray intersects the plane")
    if votes_up == votes_down:
        raise Ambiguous(
            f"up-vector vote tied at {votes_up}:{votes_down}")
    return plane.normal.copy() if votes_up > votes_down else -plane.normal


def z_up_rotation(up) -> Sim3Transform:
    """Minimal rotation (about up x z) taking ``up`` to +z; rigid, no scale.

    ``up = -z`` rotates 180 degrees about +x by convention.
    """
    up = np.asarray(up, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(up)
    if norm < 1e-12:
        raise DegenerateInput("up vector has zero length")
    up = up / norm
    axis = np.cross(up, [0.0, 0.0, 1.0])
    sin_theta = np.linalg.norm(axis)
    cos_theta = up[2]
    if sin_theta < 1e-15:
        if cos_theta > 0:
            return Sim3Transform.identity()
        return Sim3Transform(1.0, np.diag([1.0, -1.0, -1.0]), np.zeros(3))
    axis = axis / sin_theta
    k = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    rot = np.eye(3) + sin_theta * k + (1.0 - cos_theta) * (k @ k)
    return Sim3Transform(1.0, rot, np.zeros(3))
