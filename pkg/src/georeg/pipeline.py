"""End-to-end registration pipelines.

Airborne-to-satellite: one flow pair between the nadir render and the
satellite orthophoto is filtered, lifted (xyz raster vs DSM), and fit with
robust RANSAC, producing the model-to-geo transform.

Ground-to-airborne: every ground image is matched against every render
tile. Per ground image, candidate transforms are fit on the top-k tiles by
surviving match count; every candidate is then scored against the pooled
correspondences from all pairs, the most-supported candidate wins, and the
final transform is refit on the winner's pooled inlier set. Low-quality
reconstructions are rejected by camera-count and inlier-fraction gates.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateInput,
    EmptyResult,
    GeoregError,
    NoCandidates,
    NoConsensus,
)
from .lifting import LiftedMatches, lift_xyz_to_dsm, lift_xyz_to_xyz
from .matching import FilterConfig, FlowPair, filter_matches
from .raster import GeoTransform, Raster
from .transforms import (
    Correspondences3D,
    RansacConfig,
    Sim3Transform,
    count_inliers,
    ransac_sim3,
    umeyama,
)

__all__ = [
    "AirToSatResult",
    "CandidateTransform",
    "GroundToAirResult",
    "SubgraphGateConfig",
    "GateDecision",
    "register_air_to_sat",
    "register_ground_to_air",
    "gate_subgraph",
]


def _reraise(err: GeoregError, stage: str):
    if err.stage is None:
        err.stage = stage
    raise err


@dataclass(frozen=True)
class AirToSatResult:
    """Model-to-geo transform plus the statistics behind it."""

    transform: Sim3Transform
    match_count: int
    lifted_count: int
    dropped_count: int
    inlier_count: int
    inlier_fraction: float

    def to_dict(self) -> dict:
        return {
            "transform": self.transform.to_dict(),
            "match_count": self.match_count,
            "lifted_count": self.lifted_count,
            "dropped_count": self.dropped_count,
            "inlier_count": self.inlier_count,
            "inlier_fraction": self.inlier_fraction,
        }


def register_air_to_sat(flow: FlowPair, xyz_air: Raster, dsm: Raster,
                        geo: GeoTransform,
                        filter_cfg: FilterConfig = FilterConfig(),
                        ransac_cfg: RansacConfig = RansacConfig()) -> AirToSatResult:
    """Register the airborne model frame to the DSM's geo frame.

    Failures carry the stage that ran dry: ``match_filter``, ``lifting``,
    or ``ransac``.
    """
    try:
        matches = filter_matches(flow, filter_cfg)
    except GeoregError as err:
        _reraise(err, "match_filter")
    try:
        lifted = lift_xyz_to_dsm(matches, xyz_air, dsm, geo)
    except GeoregError as err:
        _reraise(err, "lifting")
    try:
        transform, mask = ransac_sim3(lifted.corr, ransac_cfg)
    except GeoregError as err:
        _reraise(err, "ransac")
    transform = Sim3Transform(
        transform.scale, transform.rotation, transform.translation,
        source_frame="airborne", target_frame="geo")
    inliers = int(mask.sum())
    return AirToSatResult(
        transform=transform,
        match_count=len(matches),
        lifted_count=len(lifted),
        dropped_count=lifted.dropped_count,
        inlier_count=inliers,
        inlier_fraction=inliers / len(lifted),
    )


@dataclass(frozen=True)
class CandidateTransform:
    """One top-k tile's transform and its support in the pooled matches."""

    transform: Sim3Transform
    ground_image: str
    tile: str
    match_count: int
    inlier_count: int
    inlier_fraction: float
    selected: bool = False

    def to_dict(self) -> dict:
        return {
            "transform": self.transform.to_dict(),
            "ground_image": self.ground_image,
            "tile": self.tile,
            "match_count": self.match_count,
            "inlier_count": self.inlier_count,
            "inlier_fraction": self.inlier_fraction,
            "selected": self.selected,
        }


@dataclass(frozen=True)
class GroundToAirResult:
    """Consensus transform, candidate ledger, and final inlier statistics."""

    transform: Sim3Transform
    candidates: tuple[CandidateTransform, ...]
    pooled_count: int
    final_inlier_count: int
    final_inlier_fraction: float

    def to_dict(self) -> dict:
        return {
            "transform": self.transform.to_dict(),
            "candidates": [c.to_dict() for c in self.candidates],
            "pooled_count": self.pooled_count,
            "final_inlier_count": self.final_inlier_count,
            "final_inlier_fraction": self.final_inlier_fraction,
        }


def _evaluate_pair(args):
    key, flow, xyz_a, xyz_b, filter_cfg = args
    try:
        matches = filter_matches(flow, filter_cfg)
        lifted = lift_xyz_to_xyz(matches, xyz_a, xyz_b)
    except EmptyResult:
        return key, 0, None
    return key, len(matches), lifted


def register_ground_to_air(
        ground_flows: dict[tuple[str, str], FlowPair],
        xyz_ground: dict[str, Raster],
        xyz_air_tiles: dict[str, Raster],
        k: int = 5,
        inlier_threshold: float = 0.5,
        filter_cfg: FilterConfig = FilterConfig(),
        ransac_cfg: RansacConfig | None = None,
        threads: int | None = None) -> GroundToAirResult:
    """Exhaustive-matching consensus registration of a ground reconstruction.

    ``ground_flows`` maps (ground_image_id, tile_id) to the dense flow pair
    between that image and that render tile; ``xyz_ground``/``xyz_air_tiles``
    give each side's per-pixel 3D coordinates. Pairs are evaluated in sorted
    key order (optionally across threads; the reduction is order-insensitive)
    so results do not depend on dict or schedule order.

    Raises NoCandidates when no tile yields a fittable transform and
    NoConsensus when the best candidate has fewer than 3 pooled inliers.
    """
    if ransac_cfg is None:
        ransac_cfg = RansacConfig(inlier_threshold=inlier_threshold)

    jobs = []
    for key in sorted(ground_flows):
        image_id, tile_id = key
        jobs.append((key, ground_flows[key], xyz_ground[image_id],
                     xyz_air_tiles[tile_id], filter_cfg))
    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            evaluated = list(pool.map(_evaluate_pair, jobs))
    else:
        evaluated = [_evaluate_pair(job) for job in jobs]
    evaluated.sort(key=lambda item: item[0])

    per_pair: dict[tuple[str, str], tuple[int, LiftedMatches | None]] = {
        key: (count, lifted) for key, count, lifted in evaluated}
    surviving = [(key, count, lifted) for key, (count, lifted) in per_pair.items()
                 if lifted is not None]
    if not surviving:
        raise NoCandidates("no (ground image, tile) pair survived filtering",
                           stage="exhaustive_matching")

    pooled = Correspondences3D(
        np.vstack([lifted.corr.source for _, _, lifted in surviving]),
        np.vstack([lifted.corr.target for _, _, lifted in surviving]),
    )

    candidates: list[CandidateTransform] = []
    images = sorted({key[0] for key, _, _ in surviving})
    for image_id in images:
        pairs = [(key[1], count, lifted) for key, count, lifted in surviving
                 if key[0] == image_id]
        pairs.sort(key=lambda item: (-item[1], item[0]))
        for tile_id, count, lifted in pairs[:k]:
            try:
                transform, _ = ransac_sim3(lifted.corr, ransac_cfg)
            except (NoConsensus, DegenerateInput):
                continue
            pooled_inliers, _ = count_inliers(transform, pooled, inlier_threshold)
            candidates.append(CandidateTransform(
                transform=transform,
                ground_image=image_id,
                tile=tile_id,
                match_count=count,
                inlier_count=pooled_inliers,
                inlier_fraction=pooled_inliers / len(pooled),
            ))
    if not candidates:
        raise NoCandidates("no top-k tile produced a candidate transform",
                           stage="exhaustive_matching")

    def residual_sum(cand: CandidateTransform) -> float:
        residuals = np.linalg.norm(
            cand.transform.apply(pooled.source) - pooled.target, axis=1)
        return float(residuals[residuals < inlier_threshold].sum())

    winner = min(candidates, key=lambda c: (-c.inlier_count, residual_sum(c),
                                            c.ground_image, c.tile))
    assert winner.inlier_count == max(c.inlier_count for c in candidates)
    if winner.inlier_count < 3:
        raise NoConsensus(
            f"best candidate has {winner.inlier_count} pooled inliers; need 3",
            stage="consensus")

    _, winner_mask = count_inliers(winner.transform, pooled, inlier_threshold)
    try:
        final = umeyama(pooled.subset(winner_mask))
    except DegenerateInput:
        final = winner.transform
    final = Sim3Transform(final.scale, final.rotation, final.translation,
                          source_frame="ground", target_frame="airborne")
    final_count, _ = count_inliers(final, pooled, inlier_threshold)

    ledger = tuple(sorted(
        (CandidateTransform(c.transform, c.ground_image, c.tile, c.match_count,
                            c.inlier_count, c.inlier_fraction,
                            selected=(c is winner))
         for c in candidates),
        key=lambda c: (-c.match_count, c.ground_image, c.tile)))
    return GroundToAirResult(
        transform=final,
        candidates=ledger,
        pooled_count=len(pooled),
        final_inlier_count=final_count,
        final_inlier_fraction=final_count / len(pooled),
    )


@dataclass(frozen=True)
class SubgraphGateConfig:
    """Quality gates for accepting a reconstruction's registration."""

    min_cameras: int = 9
    min_inlier_fraction: float = 0.2

    def __post_init__(self):
        if self.min_cameras <= 0 or self.min_inlier_fraction <= 0:
            raise DegenerateInput("gate thresholds must be positive")


@dataclass(frozen=True)
class GateDecision:
    accepted: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.accepted


def gate_subgraph(camera_count: int, final_inlier_fraction: float,
                  cfg: SubgraphGateConfig = SubgraphGateConfig()) -> GateDecision:
    """Accept a subgraph registration iff both quality gates pass (inclusive)."""
    if camera_count < cfg.min_cameras:
        return GateDecision(False, f"too few cameras: {camera_count} < "
                                   f"{cfg.min_cameras}")
    if final_inlier_fraction < cfg.min_inlier_fraction:
        return GateDecision(
            False, f"low inlier fraction: {final_inlier_fraction:.3f} < "
                   f"{cfg.min_inlier_fraction}")
    return GateDecision(True)
