"""3D similarity transforms and their robust estimation.

A similarity (Sim(3)) transform is ``p -> scale * R @ p + t`` with a proper
rotation R. The closed-form least-squares fit between corresponding point
sets (:func:`umeyama`) is wrapped in a RANSAC loop (:func:`ransac_sim3`) so
that wrong correspondences cannot corrupt the estimate.

Points are plain numpy arrays: ``(3,)`` for a single point, ``(N, 3)`` for a
set. Array inputs are converted to float64 at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateInput, NoConsensus, ShapeMismatch

__all__ = [
    "Sim3Transform",
    "Correspondences3D",
    "RansacConfig",
    "umeyama",
    "ransac_sim3",
    "count_inliers",
    "random_rotation",
    "rotation_angle_deg",
]

_ORTHONORMAL_TOL = 1e-9


def _as_points(x, name: str = "points") -> np.ndarray:
    pts = np.asarray(x, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeMismatch(f"{name} must have shape (N, 3), got {pts.shape}")
    return pts


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


def rotation_to_quat_wxyz(rotation: np.ndarray) -> np.ndarray:
    """Rotation matrix to a unit quaternion in (w, x, y, z) order, w >= 0."""
    q = Rotation.from_matrix(np.asarray(rotation, dtype=np.float64)).as_quat()
    wxyz = np.array([q[3], q[0], q[1], q[2]], dtype=np.float64)
    if wxyz[0] < 0:
        wxyz = -wxyz
    return wxyz / np.linalg.norm(wxyz)


def quat_wxyz_to_rotation(quat: np.ndarray) -> np.ndarray:
    """Unit quaternion in (w, x, y, z) order to a rotation matrix."""
    q = np.asarray(quat, dtype=np.float64)
    if q.shape != (4,):
        raise ShapeMismatch(f"quaternion must have shape (4,), got {q.shape}")
    return Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()


def rotation_angle_deg(r_a: np.ndarray, r_b: np.ndarray | None = None) -> float:
    """Angle in degrees of r_a (relative to r_b when given).

    atan2 of the skew-part magnitude against the trace keeps full precision
    for angles near 0 and near 180 deg, unlike the bare acos form.
    """
    r = np.asarray(r_a, dtype=np.float64)
    if r_b is not None:
        r = r @ np.asarray(r_b, dtype=np.float64).T
    skew = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return math.degrees(math.atan2(np.linalg.norm(skew), (np.trace(r) - 1.0) / 2.0))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly random proper rotation matrix."""
    return Rotation.random(random_state=rng).as_matrix()


@dataclass(frozen=True)
class Sim3Transform:
    """Scale + rotation + translation mapping one 3D frame to another.

    ``apply(p) = scale * rotation @ p + translation``. The rotation must be
    orthonormal with determinant +1 (within 1e-9) and the scale positive;
    violations raise at construction so invalid transforms cannot circulate.
    """

    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    source_frame: str = ""
    target_frame: str = ""

    def __post_init__(self):
        scale = float(self.scale)
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not math.isfinite(scale) or scale <= 0.0:
            raise DegenerateInput(f"scale must be finite and > 0, got {scale}")
        if rot.shape != (3, 3):
            raise ShapeMismatch(f"rotation must be 3x3, got {rot.shape}")
        if not np.all(np.isfinite(rot)) or not np.all(np.isfinite(trans)):
            raise DegenerateInput("rotation/translation contain non-finite values")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > _ORTHONORMAL_TOL:
            raise DegenerateInput("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(rot) - 1.0) > _ORTHONORMAL_TOL:
            raise DegenerateInput("rotation determinant differs from +1 by more than 1e-9")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "rotation", _frozen(rot))
        object.__setattr__(self, "translation", _frozen(trans))

    @classmethod
    def identity(cls, source_frame: str = "", target_frame: str = "") -> "Sim3Transform":
        return cls(1.0, np.eye(3), np.zeros(3),
                   source_frame=source_frame, target_frame=target_frame)

    def apply(self, points) -> np.ndarray:
        """Transform a (3,) point or (N, 3) point set."""
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        out = self.scale * _as_points(pts) @ self.rotation.T + self.translation
        return out[0] if single else out

    def compose(self, inner: "Sim3Transform") -> "Sim3Transform":
        """Transform equal to applying ``inner`` first, then ``self``."""
        return Sim3Transform(
            self.scale * inner.scale,
            self.rotation @ inner.rotation,
            self.scale * self.rotation @ inner.translation + self.translation,
            source_frame=inner.source_frame,
            target_frame=self.target_frame,
        )

    def inverse(self) -> "Sim3Transform":
        rot_inv = self.rotation.T
        return Sim3Transform(
            1.0 / self.scale,
            rot_inv,
            -(rot_inv @ self.translation) / self.scale,
            source_frame=self.target_frame,
            target_frame=self.source_frame,
        )

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "rotation_quaternion_wxyz": rotation_to_quat_wxyz(self.rotation).tolist(),
            "translation_m": self.translation.tolist(),
            "source_frame": self.source_frame,
            "target_frame": self.target_frame,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Sim3Transform":
        quat = np.asarray(d["rotation_quaternion_wxyz"], dtype=np.float64)
        return cls(
            float(d["scale"]),
            quat_wxyz_to_rotation(quat / np.linalg.norm(quat)),
            np.asarray(d["translation_m"], dtype=np.float64),
            source_frame=d.get("source_frame", ""),
            target_frame=d.get("target_frame", ""),
        )


@dataclass(frozen=True)
class Correspondences3D:
    """Paired 3D points (and optional nonnegative weights) in two frames."""

    source: np.ndarray
    target: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        src = _as_points(self.source, "source")
        tgt = _as_points(self.target, "target")
        if src.shape != tgt.shape:
            raise ShapeMismatch(
                f"source/target lengths differ: {src.shape[0]} vs {tgt.shape[0]}")
        if not np.all(np.isfinite(src)) or not np.all(np.isfinite(tgt)):
            raise DegenerateInput("correspondences contain non-finite coordinates")
        w = self.weights
        if w is not None:
            w = np.asarray(w, dtype=np.float64).reshape(-1)
            if w.shape[0] != src.shape[0]:
                raise ShapeMismatch("weights length differs from correspondences")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise DegenerateInput("weights must be finite and nonnegative")
            w = _frozen(w)
        object.__setattr__(self, "source", _frozen(src))
        object.__setattr__(self, "target", _frozen(tgt))
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.source.shape[0]

    def subset(self, mask) -> "Correspondences3D":
        w = None if self.weights is None else self.weights[mask]
        return Correspondences3D(self.source[mask], self.target[mask], w)


@dataclass(frozen=True)
class RansacConfig:
    """RANSAC parameters for similarity estimation.

    The 0.5 m default inlier threshold is the pipeline-wide consistency
    radius; iteration policy (adaptive count at the given confidence,
    capped at max_iterations) is an implementation default.
    """

    inlier_threshold: float = 0.5
    max_iterations: int = 2000
    min_sample_size: int = 3
    confidence: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if self.inlier_threshold <= 0:
            raise DegenerateInput("inlier_threshold must be > 0")
        if self.max_iterations < 1:
            raise DegenerateInput("max_iterations must be >= 1")
        if not 0.0 < self.confidence < 1.0:
            raise DegenerateInput("confidence must lie in (0, 1)")


def umeyama(corr: Correspondences3D) -> Sim3Transform:
    """Closed-form least-squares Sim(3) fit of corr.source onto corr.target.

    Minimizes sum w_i * ||s * R @ src_i + t - tgt_i||^2. The rotation is
    forced proper: if the optimal orthogonal matrix would be a reflection,
    the sign of the smallest singular value's axis is flipped, yielding the
    best det=+1 rotation.

    Raises DegenerateInput for fewer than 3 pairs or when the centered
    source points have rank < 2 (collinear), which leaves the rotation
    unconstrained.
    """
    n = len(corr)
    if n < 3:
        raise DegenerateInput(f"need at least 3 correspondences, got {n}")
    src, tgt = corr.source, corr.target
    if corr.weights is None:
        w = np.full(n, 1.0 / n)
    else:
        total = float(corr.weights.sum())
        if total <= 0:
            raise DegenerateInput("all correspondence weights are zero")
        w = corr.weights / total

    mu_src = w @ src
    mu_tgt = w @ tgt
    src_c = src - mu_src
    tgt_c = tgt - mu_tgt

    # Cross-covariance maps source directions into target directions.
    cov = (tgt_c * w[:, None]).T @ src_c
    var_src = float(np.sum(w * np.einsum("ij,ij->i", src_c, src_c)))

    sing = np.linalg.svd(src_c * np.sqrt(w)[:, None], compute_uv=False)
    if sing[0] <= 0 or sing[1] <= _ORTHONORMAL_TOL * sing[0] or var_src <= 0:
        raise DegenerateInput("source points are collinear or coincident")

    u, d, vt = np.linalg.svd(cov)
    s_fix = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2] = -1.0
    rot = u @ np.diag(s_fix) @ vt
    scale = float(d @ s_fix) / var_src
    if not math.isfinite(scale) or scale <= 0:
        raise DegenerateInput("degenerate correspondences produced a non-positive scale")
    trans = mu_tgt - scale * rot @ mu_src
    return Sim3Transform(scale, rot, trans)


def count_inliers(transform: Sim3Transform, corr: Correspondences3D,
                  threshold: float) -> tuple[int, np.ndarray]:
    """Count pairs with ||T(src) - tgt|| strictly below threshold."""
    if threshold <= 0:
        raise DegenerateInput("threshold must be > 0")
    residuals = np.linalg.norm(transform.apply(corr.source) - corr.target, axis=1)
    mask = residuals < threshold
    return int(mask.sum()), mask


def _sample_indices(seed: int, iteration: int, n: int, k: int) -> np.ndarray:
    # Sampling contract: iteration i draws from default_rng([seed, i]), so
    # iterations are independent of evaluation order (serial == parallel).
    return np.random.default_rng([seed, iteration]).choice(n, size=k, replace=False)


def ransac_sim3(corr: Correspondences3D,
                cfg: RansacConfig = RansacConfig()) -> tuple[Sim3Transform, np.ndarray]:
    """Robust Sim(3) estimate from correspondences containing outliers.

    Per iteration a minimal 3-pair sample is fit with :func:`umeyama` and
    scored by inlier count at cfg.inlier_threshold (ties broken by smaller
    inlier residual sum). The iteration budget shrinks adaptively from the
    standard confidence formula and is capped at cfg.max_iterations. The
    winning consensus set is refit once with umeyama and the returned mask
    is evaluated under that final transform.

    Raises NoConsensus when no model reaches 3 inliers.
    """
    n = len(corr)
    if n < 3:
        raise DegenerateInput(f"need at least 3 correspondences, got {n}")
    src, tgt = corr.source, corr.target

    best_count = 0
    best_res_sum = np.inf
    best_transform: Sim3Transform | None = None
    best_mask: np.ndarray | None = None
    required = cfg.max_iterations

    for iteration in range(cfg.max_iterations):
        if iteration >= required:
            break
        idx = _sample_indices(cfg.seed, iteration, n, cfg.min_sample_size)
        try:
            model = umeyama(Correspondences3D(src[idx], tgt[idx]))
        except DegenerateInput:
            continue
        residuals = np.linalg.norm(model.apply(src) - tgt, axis=1)
        mask = residuals < cfg.inlier_threshold
        count = int(mask.sum())
        if count == 0:
            continue
        res_sum = float(residuals[mask].sum())
        if count > best_count or (count == best_count and res_sum < best_res_sum):
            best_count = count
            best_res_sum = res_sum
            best_transform = model
            best_mask = mask
            inlier_ratio = count / n
            fail_prob = 1.0 - inlier_ratio ** cfg.min_sample_size
            if fail_prob <= 0.0:
                required = iteration + 1
            elif fail_prob < 1.0:
                required = min(
                    cfg.max_iterations,
                    math.ceil(math.log(1.0 - cfg.confidence) / math.log(fail_prob)),
                )

    if best_transform is None or best_count < 3:
        raise NoConsensus(
            f"best model has {best_count} inliers at threshold "
            f"{cfg.inlier_threshold}; need 3")

    try:
        refit = umeyama(corr.subset(best_mask))
    except DegenerateInput:
        # Consensus set happens to be collinear; the minimal-sample model is
        # still a valid explanation of it.
        return best_transform, best_mask
    _, final_mask = count_inliers(refit, corr, cfg.inlier_threshold)
    return refit, final_mask
