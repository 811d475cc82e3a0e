"""Robust point-to-point ICP refinement with a Tukey kernel.

Starting from the consensus similarity transform, alternate exact
nearest-neighbor association (within a radius) with a Tukey-weighted
closed-form rigid update. The redescending kernel gives zero weight to
residuals beyond its scale k, so far outliers cannot drag the solution.
Scale stays frozen at the initial transform's value unless explicitly
re-estimated: the similarity stage already fixed it, and ICP here is a
rigid polish.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateInput, Diverged, NoCorrespondences, ShapeMismatch
from .raster import read_raster
from .transforms import Sim3Transform, rotation_angle_deg

__all__ = [
    "IcpConfig",
    "IcpIteration",
    "IcpResult",
    "icp_refine",
    "tukey_weight",
    "tukey_rho",
    "load_point_cloud",
    "save_point_cloud",
]

CLOUD_CSV_HEADER = "x,y,z"


@dataclass(frozen=True)
class IcpConfig:
    """Refinement parameters.

    ``tukey_k`` defaults to 3 x the median initial residual (a MAD-style
    auto scale) and ``correspondence_radius`` to 5 x tukey_k; set either
    explicitly to pin them.
    """

    max_iterations: int = 50
    correspondence_radius: float | None = None
    tukey_k: float | None = None
    translation_tol_m: float = 1e-9
    rotation_tol_deg: float = 1e-9
    estimate_scale: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DegenerateInput("max_iterations must be >= 1")
        for value in (self.correspondence_radius, self.tukey_k):
            if value is not None and value <= 0:
                raise DegenerateInput("radius/kernel scale must be > 0")
        if self.translation_tol_m <= 0 or self.rotation_tol_deg <= 0:
            raise DegenerateInput("convergence tolerances must be > 0")


@dataclass(frozen=True)
class IcpIteration:
    index: int
    objective: float
    matched: int
    accepted: bool


@dataclass(frozen=True)
class IcpResult:
    transform: Sim3Transform
    trace: tuple[IcpIteration, ...]
    converged: bool
    iterations: int


def tukey_weight(residuals, k: float) -> np.ndarray:
    """Tukey biweight: (1 - (r/k)^2)^2 below k, exactly 0 at and beyond it."""
    r = np.asarray(residuals, dtype=np.float64)
    w = np.zeros_like(r)
    inside = r < k
    u = r[inside] / k
    w[inside] = (1.0 - u * u) ** 2
    return w


def tukey_rho(residuals, k: float) -> np.ndarray:
    """Tukey loss; saturates at k^2/6 beyond the kernel scale."""
    r = np.asarray(residuals, dtype=np.float64)
    cap = k * k / 6.0
    rho = np.full_like(r, cap)
    inside = r < k
    u = r[inside] / k
    rho[inside] = cap * (1.0 - (1.0 - u * u) ** 3)
    return rho


def _weighted_fit(src: np.ndarray, tgt: np.ndarray, weights: np.ndarray,
                  fixed_scale: float | None) -> Sim3Transform:
    total = float(weights.sum())
    if total <= 0:
        raise DegenerateInput("all association weights are zero")
    w = weights / total
    mu_s = w @ src
    mu_t = w @ tgt
    src_c = src - mu_s
    tgt_c = tgt - mu_t
    cov = (tgt_c * w[:, None]).T @ src_c
    sing = np.linalg.svd(src_c * np.sqrt(w)[:, None], compute_uv=False)
    if sing[0] <= 0 or sing[1] <= 1e-9 * sing[0]:
        raise DegenerateInput("weighted association is collinear")
    u, d, vt = np.linalg.svd(cov)
    s_fix = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2] = -1.0
    rot = u @ np.diag(s_fix) @ vt
    if fixed_scale is None:
        var_s = float(np.sum(w * np.einsum("ij,ij->i", src_c, src_c)))
        scale = float(d @ s_fix) / var_s
    else:
        scale = fixed_scale
    return Sim3Transform(scale, rot, mu_t - scale * rot @ mu_s)


def icp_refine(source, target, init: Sim3Transform,
               cfg: IcpConfig = IcpConfig()) -> IcpResult:
    """Refine ``init`` so that it maps ``source`` points onto ``target``.

    The trace records the robust objective after every iteration (index 0
    is the initial association); entries are flagged accepted when the
    objective did not increase, and three consecutive increases raise
    Diverged. Association is exact nearest-neighbor within the radius.

    Raises NoCorrespondences when no pair lies within the radius at the
    initial pose.
    """
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    tgt = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if len(src) < 3 or len(tgt) < 3:
        raise DegenerateInput("both clouds need at least 3 points")
    tree = cKDTree(tgt)

    def associate(transform: Sim3Transform, radius: float):
        moved = transform.apply(src)
        dist, idx = tree.query(moved, k=1, distance_upper_bound=radius)
        hit = np.isfinite(dist)
        return dist[hit], src[hit], tgt[idx[hit]]

    radius = cfg.correspondence_radius or np.inf
    dist, a_pts, b_pts = associate(init, radius)
    if dist.size == 0:
        raise NoCorrespondences(
            "no point pairs within the association radius at the initial pose")
    k = cfg.tukey_k if cfg.tukey_k is not None \
        else max(3.0 * float(np.median(dist)), 1e-12)
    if cfg.correspondence_radius is None:
        radius = 5.0 * k
        dist, a_pts, b_pts = associate(init, radius)
        if dist.size == 0:
            raise NoCorrespondences(
                "no point pairs within the auto association radius")

    fixed_scale = None if cfg.estimate_scale else init.scale
    objective = float(tukey_rho(dist, k).sum())
    trace = [IcpIteration(0, objective, int(dist.size), True)]
    best_objective = objective
    transform = init
    converged = False
    increases = 0
    iteration = 0

    for iteration in range(1, cfg.max_iterations + 1):
        weights = tukey_weight(dist, k)
        new_transform = _weighted_fit(a_pts, b_pts, weights, fixed_scale)
        delta_t = float(np.linalg.norm(
            new_transform.translation - transform.translation))
        delta_r = rotation_angle_deg(new_transform.rotation, transform.rotation)
        transform = new_transform

        dist, a_pts, b_pts = associate(transform, radius)
        if dist.size == 0:
            break
        objective = float(tukey_rho(dist, k).sum())
        accepted = objective <= best_objective * (1.0 + 1e-12) + 1e-15
        trace.append(IcpIteration(iteration, objective, int(dist.size), accepted))
        if accepted:
            best_objective = min(best_objective, objective)
            increases = 0
        else:
            increases += 1
            if increases >= 3:
                raise Diverged(
                    "robust objective increased over 3 consecutive iterations")
        if delta_t < cfg.translation_tol_m and delta_r < cfg.rotation_tol_deg:
            converged = True
            break

    return IcpResult(transform, tuple(trace), converged, iteration)


def load_point_cloud(path) -> np.ndarray:
    """(N, 3) points from an ``x,y,z`` CSV or an XYZ raster (nodata skipped)."""
    p = Path(path)
    if p.suffix == ".grr":
        raster = read_raster(p)
        if raster.channels != 3:
            raise ShapeMismatch(f"{path}: point-cloud raster must have 3 channels")
        keep = ~raster.nodata_mask()
        return raster.data[keep].astype(np.float64)
    lines = p.read_text().strip().splitlines()
    if lines and lines[0].strip().lower() == CLOUD_CSV_HEADER:
        lines = lines[1:]
    if not lines:
        return np.empty((0, 3))
    return np.array([[float(v) for v in line.split(",")] for line in lines],
                    dtype=np.float64).reshape(-1, 3)


def save_point_cloud(points, path) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rows = [CLOUD_CSV_HEADER]
    rows += [f"{x:.9f},{y:.9f},{z:.9f}" for x, y, z in pts]
    Path(path).write_text("\n".join(rows) + "\n")
