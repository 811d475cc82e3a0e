"""Synthetic scenes with exact ground truth for exercising the pipeline.

A scene is a heightfield (flat base plus axis-aligned boxes) in the
airborne model frame. From it the generator derives every artifact the
registration stages consume: a satellite DSM with geotransform, the nadir
render's per-pixel coordinates, dense flows between render and DSM, tiled
render coordinates, and oblique orthographic "ground" views with their own
coordinate rasters and flows. All of it is deterministic per seed.

Exactness rules the construction:

* Truth transforms are yaw + scale + translation. A general 3D rotation
  would make the render-to-DSM flow field non-affine, and bilinear
  resampling of a non-affine field cannot be exactly cyclically consistent.
* Ground views are orthographic. Perspective projection is projective, not
  affine, in the tile coordinates, which again breaks exact consistency
  under bilinear sampling (the flows would still be consistent to ~1e-4 px,
  far inside the 2 px gate, but not exact).
* Pixels whose landed 2x2 neighborhood on the other side straddles a height
  discontinuity get zero model confidence: their lifted coordinates would
  carry interpolation error. Real renders are least reliable at exactly
  those depth discontinuities.
* The DSM grid pitch is the air pitch times the truth scale, so aligned
  scenes (no yaw, integer translations) produce flows whose values are
  exactly representable in float32 and round-trip residuals that are
  exactly zero. With nonzero yaw, residuals sit at the float32 noise floor
  (around 1e-5 px for these image sizes), still effectively exact for the
  2 px gate. Keep scale dyadic and heights/translations integer-valued and
  the z channel stays exact regardless of yaw.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geodesy import GeodeticPoint, enu_to_geodetic
from .gravity import CameraPose, save_cameras
from .matching import FlowPair
from .raster import (
    DsmCovariance,
    GeoTransform,
    Raster,
    Semantic,
    write_raster,
    write_sidecar,
)
from .tiling import make_tile_grid, oblique_poses
from .transforms import Sim3Transform

__all__ = [
    "BoxSpec",
    "YawSim3Spec",
    "NoiseSpec",
    "SceneSpec",
    "SceneBundle",
    "generate_scene",
    "corrupt_flows",
    "random_flow_pair",
]

FLOW_NODATA = -1e9


@dataclass(frozen=True)
class BoxSpec:
    """Axis-aligned box footprint with a flat top ``height_m`` above base."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    height_m: float


@dataclass(frozen=True)
class YawSim3Spec:
    """Yaw-only similarity: the oracle's truth-transform parameterization."""

    yaw_deg: float = 0.0
    scale: float = 1.0
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def to_transform(self) -> Sim3Transform:
        a = math.radians(self.yaw_deg)
        c, s = math.cos(a), math.sin(a)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return Sim3Transform(self.scale, rot, np.asarray(self.translation, float))


@dataclass(frozen=True)
class NoiseSpec:
    """Flow corruption: Gaussian jitter plus uniformly random outlier targets.

    Easy mode multiplies corrupted pixels' confidence by confidence_decay
    (so the confidence gate alone catches them); hard mode leaves
    confidence high and corrupts forward and backward independently,
    leaving only cyclic consistency to find them.
    """

    flow_jitter_px: float = 0.0
    outlier_fraction: float = 0.0
    confidence_decay: float = 0.1
    hard: bool = False


@dataclass(frozen=True)
class SceneSpec:
    extent_m: float = 100.0
    base_height_m: float = 0.0
    boxes: tuple[BoxSpec, ...] = ()
    air_to_geo: YawSim3Spec = YawSim3Spec()
    ground_to_air: YawSim3Spec = YawSim3Spec()
    noise: NoiseSpec = NoiseSpec()
    seed: int = 0
    air_resolution: int = 128
    dsm_margin_px: int = 2
    air_camera_count: int = 12
    ground_image_count: int = 0
    ground_resolution: int = 64
    tile_size: int = 75
    tile_overlap: float = 0.25
    geodetic_anchor: tuple[float, float, float] = (38.0, -77.0, 50.0)

    def to_dict(self) -> dict:
        return {
            "extent_m": self.extent_m,
            "base_height_m": self.base_height_m,
            "boxes": [vars(b) for b in self.boxes],
            "air_to_geo": vars(self.air_to_geo) | {
                "translation": list(self.air_to_geo.translation)},
            "ground_to_air": vars(self.ground_to_air) | {
                "translation": list(self.ground_to_air.translation)},
            "noise": vars(self.noise),
            "seed": self.seed,
            "air_resolution": self.air_resolution,
            "dsm_margin_px": self.dsm_margin_px,
            "air_camera_count": self.air_camera_count,
            "ground_image_count": self.ground_image_count,
            "ground_resolution": self.ground_resolution,
            "tile_size": self.tile_size,
            "tile_overlap": self.tile_overlap,
            "geodetic_anchor": list(self.geodetic_anchor),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        def yaw(key):
            sub = d.get(key, {})
            return YawSim3Spec(sub.get("yaw_deg", 0.0), sub.get("scale", 1.0),
                               tuple(sub.get("translation", (0.0, 0.0, 0.0))))

        return cls(
            extent_m=d.get("extent_m", 100.0),
            base_height_m=d.get("base_height_m", 0.0),
            boxes=tuple(BoxSpec(**b) for b in d.get("boxes", [])),
            air_to_geo=yaw("air_to_geo"),
            ground_to_air=yaw("ground_to_air"),
            noise=NoiseSpec(**d.get("noise", {})),
            seed=d.get("seed", 0),
            air_resolution=d.get("air_resolution", 128),
            dsm_margin_px=d.get("dsm_margin_px", 2),
            air_camera_count=d.get("air_camera_count", 12),
            ground_image_count=d.get("ground_image_count", 0),
            ground_resolution=d.get("ground_resolution", 64),
            tile_size=d.get("tile_size", 75),
            tile_overlap=d.get("tile_overlap", 0.25),
            geodetic_anchor=tuple(d.get("geodetic_anchor", (38.0, -77.0, 50.0))),
        )


class _Heightfield:
    def __init__(self, spec: SceneSpec):
        self.spec = spec

    def __call__(self, xs, ys) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        h = np.full(xs.shape, self.spec.base_height_m)
        for box in self.spec.boxes:
            inside = ((xs >= box.x_min) & (xs < box.x_max) &
                      (ys >= box.y_min) & (ys < box.y_max))
            h = np.where(inside, np.maximum(h, self.spec.base_height_m
                                            + box.height_m), h)
        return h


class _NadirGrid:
    """Pixel <-> model-frame mapping of the north-up nadir render."""

    def __init__(self, extent_m: float, resolution: int):
        self.gsd = extent_m / resolution
        self.half = extent_m / 2.0
        self.resolution = resolution

    def pixel_to_model(self, rows, cols):
        x = -self.half + (np.asarray(cols, float) + 0.5) * self.gsd
        y = self.half - (np.asarray(rows, float) + 0.5) * self.gsd
        return x, y

    def model_to_pixel(self, x, y):
        col = (np.asarray(x, float) + self.half) / self.gsd - 0.5
        row = (self.half - np.asarray(y, float)) / self.gsd - 0.5
        return row, col


def _conf(shape, value=1.0) -> Raster:
    return Raster(np.full((*shape, 1), value, dtype=np.float32),
                  Semantic.CONFIDENCE1)


def _flow(values: np.ndarray, invalid: np.ndarray | None = None) -> Raster:
    data = values.astype(np.float32)
    if invalid is not None and invalid.any():
        data = data.copy()
        data[invalid] = FLOW_NODATA
    return Raster(data, Semantic.FLOW2, nodata_value=FLOW_NODATA)


@dataclass
class SceneBundle:
    """Everything generate_scene produces; see module docstring."""

    spec: SceneSpec
    heightfield: _Heightfield
    truth_air_to_geo: Sim3Transform
    truth_ground_to_air: Sim3Transform
    xyz_air: Raster
    dsm: Raster
    geo: GeoTransform
    covariance: DsmCovariance
    air_flow: FlowPair
    air_flow_clean: FlowPair
    air_corrupted_mask: np.ndarray
    air_cameras: list[CameraPose]
    truth_camera_positions_geo: np.ndarray
    nadir_grid: _NadirGrid
    tiles: dict[str, Raster] = field(default_factory=dict)
    tile_offsets: dict[str, tuple[int, int]] = field(default_factory=dict)
    ground_images: dict[str, Raster] = field(default_factory=dict)
    ground_cameras: list[CameraPose] = field(default_factory=list)
    correct_tile: dict[str, str] = field(default_factory=dict)
    correct_flows: dict[tuple[str, str], FlowPair] = field(default_factory=dict)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "scene.json").write_text(
            json.dumps(self.spec.to_dict(), indent=2) + "\n")
        (out / "truth_transforms.json").write_text(json.dumps({
            "air_to_geo": self.truth_air_to_geo.to_dict(),
            "ground_to_air": self.truth_ground_to_air.to_dict(),
        }, indent=2) + "\n")

        write_raster(self.dsm, out / "dsm.grr")
        write_sidecar(out / "dsm.grr", geo_transform=self.geo,
                      covariance=self.covariance,
                      provenance={"generator": "synthetic-oracle",
                                  "seed": self.spec.seed})
        write_raster(self.xyz_air, out / "xyz_air.grr")

        flows = out / "flows"
        flows.mkdir(exist_ok=True)
        fp = self.air_flow
        write_raster(fp.forward, flows / "air2sat.fwd.grr")
        write_raster(fp.backward, flows / "air2sat.bwd.grr")
        write_raster(fp.conf_forward, flows / "air2sat.conf_fwd.grr")
        write_raster(fp.conf_backward, flows / "air2sat.conf_bwd.grr")
        if fp.model_confidence is not None:
            write_raster(fp.model_confidence, flows / "air2sat.model_conf.grr")

        save_cameras(self.air_cameras, out / "cameras_model.json")
        anchor = self.spec.geodetic_anchor
        truth_records = []
        anchor_point = GeodeticPoint(*anchor)
        for camera, position in zip(self.air_cameras,
                                    self.truth_camera_positions_geo):
            p = enu_to_geodetic(position, anchor_point)
            truth_records.append({"id": camera.id, "lat": float(p.latitude_deg),
                                  "lon": float(p.longitude_deg),
                                  "alt": float(p.altitude_m)})
        (out / "cameras_truth.json").write_text(json.dumps({
            "anchor": {"lat": anchor[0], "lon": anchor[1], "alt": anchor[2]},
            "cameras": truth_records,
        }, indent=2) + "\n")

        oblique_poses(np.zeros(3), self.spec.extent_m / 2.0).save_spec(
            out / "pose_specs.json")

        if self.ground_images:
            (out / "ground").mkdir(exist_ok=True)
            (out / "tiles").mkdir(exist_ok=True)
            (out / "ground_flows").mkdir(exist_ok=True)
            manifest = {"images": {}, "tiles": {}, "pairs": []}
            referenced = {tile for _, tile in self.correct_flows}
            for image_id, raster in sorted(self.ground_images.items()):
                rel = f"ground/xyz_{image_id}.grr"
                write_raster(raster, out / rel)
                manifest["images"][image_id] = rel
            for tile_id in sorted(referenced):
                rel = f"tiles/xyz_{tile_id}.grr"
                write_raster(self.tiles[tile_id], out / rel)
                manifest["tiles"][tile_id] = rel
            for (image_id, tile_id), flow in sorted(self.correct_flows.items()):
                stem = f"ground_flows/{image_id}__{tile_id}"
                write_raster(flow.forward, out / f"{stem}.fwd.grr")
                write_raster(flow.backward, out / f"{stem}.bwd.grr")
                write_raster(flow.conf_forward, out / f"{stem}.conf_fwd.grr")
                write_raster(flow.conf_backward, out / f"{stem}.conf_bwd.grr")
                manifest["pairs"].append({
                    "image": image_id, "tile": tile_id,
                    "fwd": f"{stem}.fwd.grr", "bwd": f"{stem}.bwd.grr",
                    "conf_fwd": f"{stem}.conf_fwd.grr",
                    "conf_bwd": f"{stem}.conf_bwd.grr",
                })
            (out / "ground_manifest.json").write_text(
                json.dumps(manifest, indent=2) + "\n")
        return out


def _dsm_and_geo(spec: SceneSpec, heightfield: _Heightfield,
                 truth: Sim3Transform) -> tuple[Raster, GeoTransform]:
    grid = _NadirGrid(spec.extent_m, spec.air_resolution)
    gsd_dsm = truth.scale * grid.gsd
    half = spec.extent_m / 2.0
    corners = np.array([[-half, -half, 0.0], [half, -half, 0.0],
                        [half, half, 0.0], [-half, half, 0.0]])
    mapped = truth.apply(corners)
    margin = spec.dsm_margin_px * gsd_dsm
    e_min = mapped[:, 0].min() - margin
    e_max = mapped[:, 0].max() + margin
    n_min = mapped[:, 1].min() - margin
    n_max = mapped[:, 1].max() + margin
    width = int(math.ceil((e_max - e_min) / gsd_dsm))
    height = int(math.ceil((n_max - n_min) / gsd_dsm))
    geo = GeoTransform(e_min, n_max, gsd_dsm, -gsd_dsm, crs_label="local-enu",
                       geodetic_anchor=spec.geodetic_anchor)

    rows, cols = np.mgrid[0:height, 0:width]
    easting = geo.origin_easting + (cols + 0.5) * geo.pixel_size_x
    northing = geo.origin_northing + (rows + 0.5) * geo.pixel_size_y
    inv = truth.inverse()
    planar = np.stack([easting.ravel(), northing.ravel(),
                       np.zeros(easting.size)], axis=1)
    model_xy = inv.apply(planar)
    x, y = model_xy[:, 0], model_xy[:, 1]
    inside = (np.abs(x) <= half) & (np.abs(y) <= half)
    z_model = heightfield(x, y)
    z_geo = truth.scale * z_model + truth.translation[2]
    data = np.where(inside, z_geo, FLOW_NODATA).reshape(height, width, 1)
    return Raster(data.astype(np.float32), Semantic.DSM1,
                  nodata_value=FLOW_NODATA), geo


def _neighborhood_constant(values: Raster, rows: np.ndarray,
                           cols: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """True where the 2x2 bilinear neighborhood holds one valid height."""
    h, w = values.height, values.width
    in_bounds = (rows >= 0) & (rows <= h - 1) & (cols >= 0) & (cols <= w - 1)
    r = np.clip(rows, 0, h - 1)
    c = np.clip(cols, 0, w - 1)
    r0 = np.minimum(r.astype(np.int64), h - 1)
    c0 = np.minimum(c.astype(np.int64), w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    band = values.data[:, :, 0]
    stack = np.stack([band[r0, c0], band[r0, c1], band[r1, c0], band[r1, c1]])
    spread = stack.max(axis=0) - stack.min(axis=0)
    ok = in_bounds & (spread <= tol)
    if values.nodata_value is not None:
        ok &= ~np.any(stack == np.float32(values.nodata_value), axis=0)
    return ok


def _air_flow_pair(spec: SceneSpec, heightfield: _Heightfield,
                   truth: Sim3Transform, dsm: Raster,
                   geo: GeoTransform) -> FlowPair:
    grid = _NadirGrid(spec.extent_m, spec.air_resolution)
    res = spec.air_resolution
    rows, cols = np.mgrid[0:res, 0:res]
    x, y = grid.pixel_to_model(rows.ravel(), cols.ravel())
    z = heightfield(x, y)
    mapped = truth.apply(np.stack([x, y, z], axis=1))
    fwd_row = (mapped[:, 1] - geo.origin_northing) / geo.pixel_size_y - 0.5
    fwd_col = (mapped[:, 0] - geo.origin_easting) / geo.pixel_size_x - 0.5
    forward = np.stack([fwd_row, fwd_col], axis=1).reshape(res, res, 2)

    inv = truth.inverse()
    drow, dcol = np.mgrid[0:dsm.height, 0:dsm.width]
    easting = geo.origin_easting + (dcol.ravel() + 0.5) * geo.pixel_size_x
    northing = geo.origin_northing + (drow.ravel() + 0.5) * geo.pixel_size_y
    back_model = inv.apply(np.stack([easting, northing,
                                     np.zeros(easting.size)], axis=1))
    brow, bcol = grid.model_to_pixel(back_model[:, 0], back_model[:, 1])
    backward = np.stack([brow, bcol], axis=1).reshape(dsm.height, dsm.width, 2)

    # Lifts interpolate DSM height at the landing point: reliable only where
    # that neighborhood is a single surface.
    exact = _neighborhood_constant(dsm, fwd_row, fwd_col)
    model_conf = np.where(exact, 1.0, 0.0).reshape(res, res, 1)
    return FlowPair(
        _flow(forward),
        _flow(backward),
        _conf((res, res)),
        _conf((dsm.height, dsm.width)),
        model_confidence=Raster(model_conf.astype(np.float32),
                                Semantic.CONFIDENCE1),
    )


def _air_cameras(spec: SceneSpec) -> list[CameraPose]:
    cams = []
    radius = 0.6 * spec.extent_m
    height = 0.8 * spec.extent_m
    for k in range(spec.air_camera_count):
        azimuth = 2.0 * math.pi * k / spec.air_camera_count
        eye = np.array([radius * math.sin(azimuth), radius * math.cos(azimuth),
                        height])
        cams.append(CameraPose.look_at(eye, np.zeros(3), f"air_{k:02d}"))
    return cams


def _march_first_hit(origins: np.ndarray, direction: np.ndarray,
                     heightfield: _Heightfield, t_max: float,
                     steps: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """First ray/heightfield intersection per ray (orthographic: shared dir).

    Returns (points (N, 3), hit (N,)); points are refined by bisection to
    ~1e-12 of the scene scale.
    """
    ts = np.linspace(0.0, t_max, steps + 1)
    pos = origins[None, :, :] + ts[:, None, None] * direction[None, None, :]
    below = pos[:, :, 2] <= heightfield(pos[:, :, 0], pos[:, :, 1])
    below[0] = False   # cameras start above the surface
    hit = below.any(axis=0)
    first = np.argmax(below, axis=0)
    lo = ts[np.maximum(first - 1, 0)]
    hi = ts[first]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        p = origins + mid[:, None] * direction
        under = p[:, 2] <= heightfield(p[:, 0], p[:, 1])
        hi = np.where(under, mid, hi)
        lo = np.where(under, lo, mid)
    points = origins + hi[:, None] * direction
    return points, hit


@dataclass(frozen=True)
class _GroundView:
    """Oblique orthographic ground view: pixel grid on a plane."""

    camera: CameraPose
    half_extent: float
    resolution: int

    @property
    def gsd(self) -> float:
        return 2.0 * self.half_extent / self.resolution

    def pixel_rays(self) -> np.ndarray:
        rows, cols = np.mgrid[0:self.resolution, 0:self.resolution]
        u = (cols.ravel() + 0.5) * self.gsd - self.half_extent
        v = (rows.ravel() + 0.5) * self.gsd - self.half_extent
        axes = self.camera.orientation
        return (self.camera.center[None, :] + u[:, None] * axes[:, 0]
                + v[:, None] * axes[:, 1])

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rel = points - self.camera.center
        u = rel @ self.camera.orientation[:, 0]
        v = rel @ self.camera.orientation[:, 1]
        col = (u + self.half_extent) / self.gsd - 0.5
        row = (v + self.half_extent) / self.gsd - 0.5
        return row, col


def _ground_views(spec: SceneSpec, heightfield: _Heightfield) -> list[_GroundView]:
    views = []
    ring = 0.40 * spec.extent_m
    look_ring = 0.10 * spec.extent_m
    height = spec.base_height_m + 0.30 * spec.extent_m
    for k in range(spec.ground_image_count):
        azimuth = 2.0 * math.pi * k / max(spec.ground_image_count, 1)
        eye = np.array([ring * math.sin(azimuth), ring * math.cos(azimuth),
                        height])
        target = np.array([look_ring * math.sin(azimuth),
                           look_ring * math.cos(azimuth),
                           spec.base_height_m])
        camera = CameraPose.look_at(eye, target, f"g{k:02d}")
        views.append(_GroundView(camera, 0.12 * spec.extent_m,
                                 spec.ground_resolution))
    return views


def _ground_products(spec: SceneSpec, heightfield: _Heightfield,
                     bundle: SceneBundle) -> None:
    grid = bundle.nadir_grid
    xyz_nadir = bundle.xyz_air
    tile_grid = make_tile_grid(spec.air_resolution, spec.air_resolution,
                               spec.tile_size, spec.tile_overlap,
                               render_id="nadir")
    nadir_heights = Raster(xyz_nadir.data[:, :, 2:3], Semantic.DSM1)
    for render_id, row_off, col_off in tile_grid.tiles:
        tile_id = f"{render_id}_r{row_off:04d}_c{col_off:04d}"
        data = xyz_nadir.data[row_off:row_off + tile_grid.tile_height,
                              col_off:col_off + tile_grid.tile_width]
        bundle.tiles[tile_id] = Raster(data, Semantic.XYZ3)
        bundle.tile_offsets[tile_id] = (row_off, col_off)

    inv_ga = bundle.truth_ground_to_air.inverse()
    t_max = 2.0 * spec.extent_m
    surface_tol = 1e-6 * spec.extent_m
    res = spec.ground_resolution

    for view_index, view in enumerate(_ground_views(spec, heightfield)):
        image_id = view.camera.id
        bundle.ground_cameras.append(view.camera)
        direction = view.camera.orientation[:, 2]
        points, hit = _march_first_hit(view.pixel_rays(), direction,
                                       heightfield, t_max)

        xyz_ground = inv_ga.apply(points).astype(np.float32)
        xyz_ground[~hit] = FLOW_NODATA
        bundle.ground_images[image_id] = Raster(
            xyz_ground.reshape(res, res, 3), Semantic.XYZ3,
            nodata_value=FLOW_NODATA)

        # A surface point appears in the nadir render only when it is the
        # top surface at its planimetric position (not a wall).
        on_top = hit & (np.abs(heightfield(points[:, 0], points[:, 1])
                               - points[:, 2]) < surface_tol)
        g_row, g_col = grid.model_to_pixel(points[:, 0], points[:, 1])

        counts: dict[str, int] = {}
        for idx, tile_id in enumerate(sorted(bundle.tiles)):
            row_off, col_off = bundle.tile_offsets[tile_id]
            th = bundle.tiles[tile_id].height
            tw = bundle.tiles[tile_id].width
            inside = (on_top &
                      (g_row >= row_off) & (g_row <= row_off + th - 1) &
                      (g_col >= col_off) & (g_col <= col_off + tw - 1))
            counts[tile_id] = int(inside.sum())
        best_tile = max(sorted(counts), key=lambda t: counts[t])
        if counts[best_tile] == 0:
            continue
        bundle.correct_tile[image_id] = best_tile

        row_off, col_off = bundle.tile_offsets[best_tile]
        tile = bundle.tiles[best_tile]
        local_row = g_row - row_off
        local_col = g_col - col_off
        tile_heights = Raster(tile.data[:, :, 2:3], Semantic.DSM1)
        usable = (on_top &
                  (local_row >= 0) & (local_row <= tile.height - 1) &
                  (local_col >= 0) & (local_col <= tile.width - 1) &
                  _neighborhood_constant(tile_heights, local_row, local_col))
        forward = np.stack([local_row, local_col], axis=1).reshape(res, res, 2)

        # Reverse flow: every tile pixel projects into the ground view (the
        # pure geometric inverse keeps round trips exact; realism of
        # occlusion only matters on the forward side).
        trow, tcol = np.mgrid[0:tile.height, 0:tile.width]
        tile_points = tile.data.reshape(-1, 3).astype(np.float64)
        b_row, b_col = view.project(tile_points)
        backward = np.stack([b_row, b_col], axis=1).reshape(
            tile.height, tile.width, 2)

        pair = FlowPair(
            _flow(forward, invalid=~usable.reshape(res, res)),
            _flow(backward),
            _conf((res, res)),
            _conf((tile.height, tile.width)),
        )
        if spec.noise.flow_jitter_px > 0 or spec.noise.outlier_fraction > 0:
            pair, _ = corrupt_flows(pair, spec.noise,
                                    seed=spec.seed + 7000 + view_index)
        bundle.correct_flows[(image_id, best_tile)] = pair


def generate_scene(spec: SceneSpec) -> SceneBundle:
    """Build every registration input for a synthetic scene; see module doc."""
    heightfield = _Heightfield(spec)
    truth_ag = spec.air_to_geo.to_transform()
    truth_ag = Sim3Transform(truth_ag.scale, truth_ag.rotation,
                             truth_ag.translation,
                             source_frame="airborne", target_frame="geo")
    truth_ga = spec.ground_to_air.to_transform()
    truth_ga = Sim3Transform(truth_ga.scale, truth_ga.rotation,
                             truth_ga.translation,
                             source_frame="ground", target_frame="airborne")

    grid = _NadirGrid(spec.extent_m, spec.air_resolution)
    res = spec.air_resolution
    rows, cols = np.mgrid[0:res, 0:res]
    x, y = grid.pixel_to_model(rows.ravel(), cols.ravel())
    z = heightfield(x, y)
    xyz_air = Raster(np.stack([x, y, z], axis=1).reshape(res, res, 3)
                     .astype(np.float32), Semantic.XYZ3)

    dsm, geo = _dsm_and_geo(spec, heightfield, truth_ag)
    clean_flow = _air_flow_pair(spec, heightfield, truth_ag, dsm, geo)
    if spec.noise.flow_jitter_px > 0 or spec.noise.outlier_fraction > 0:
        air_flow, corrupted = corrupt_flows(clean_flow, spec.noise,
                                            seed=spec.seed)
    else:
        air_flow, corrupted = clean_flow, np.zeros((res, res), dtype=bool)

    cameras = _air_cameras(spec)
    truth_positions = truth_ag.apply(np.stack([c.center for c in cameras]))

    bundle = SceneBundle(
        spec=spec,
        heightfield=heightfield,
        truth_air_to_geo=truth_ag,
        truth_ground_to_air=truth_ga,
        xyz_air=xyz_air,
        dsm=dsm,
        geo=geo,
        covariance=DsmCovariance(np.diag([1.0, 1.0, 2.0])),
        air_flow=air_flow,
        air_flow_clean=clean_flow,
        air_corrupted_mask=corrupted,
        air_cameras=cameras,
        truth_camera_positions_geo=truth_positions,
        nadir_grid=grid,
    )
    if spec.ground_image_count > 0:
        _ground_products(spec, heightfield, bundle)
    return bundle


def corrupt_flows(fp: FlowPair, noise: NoiseSpec,
                  seed: int = 0) -> tuple[FlowPair, np.ndarray]:
    """Jitter and outlier-corrupt a flow pair; returns (pair, corrupted mask).

    The mask marks image-A pixels whose forward flow was replaced by a
    random target. With zero jitter and zero outliers the input is returned
    unchanged.
    """
    if noise.flow_jitter_px == 0 and noise.outlier_fraction == 0:
        return fp, np.zeros(fp.shape_a, dtype=bool)
    rng = np.random.default_rng(seed)
    ha, wa = fp.shape_a
    hb, wb = fp.shape_b

    def jittered(raster: Raster) -> np.ndarray:
        data = raster.data.astype(np.float64).copy()
        if noise.flow_jitter_px > 0:
            jitter = rng.normal(0.0, noise.flow_jitter_px, data.shape)
            valid = ~raster.nodata_mask()
            data[valid] += jitter[valid]
        return data

    fwd = jittered(fp.forward)
    bwd = jittered(fp.backward)

    corrupted = rng.uniform(size=(ha, wa)) < noise.outlier_fraction
    n_bad = int(corrupted.sum())
    fwd[corrupted] = np.stack([rng.uniform(0, hb - 1, n_bad),
                               rng.uniform(0, wb - 1, n_bad)], axis=1)
    conf_fwd = fp.conf_forward
    if noise.hard:
        corrupted_b = rng.uniform(size=(hb, wb)) < noise.outlier_fraction
        n_bad_b = int(corrupted_b.sum())
        bwd[corrupted_b] = np.stack([rng.uniform(0, ha - 1, n_bad_b),
                                     rng.uniform(0, wa - 1, n_bad_b)], axis=1)
    elif n_bad:
        conf_data = fp.conf_forward.data.copy()
        conf_data[corrupted] *= noise.confidence_decay
        conf_fwd = Raster(conf_data, Semantic.CONFIDENCE1,
                          nodata_value=fp.conf_forward.nodata_value)

    nodata_fwd = fp.forward.nodata_mask() & ~corrupted
    pair = FlowPair(
        _flow(fwd, invalid=nodata_fwd),
        _flow(bwd, invalid=fp.backward.nodata_mask()),
        conf_fwd,
        fp.conf_backward,
        model_confidence=fp.model_confidence,
    )
    return pair, corrupted


def random_flow_pair(shape_a: tuple[int, int], shape_b: tuple[int, int],
                     seed: int = 0,
                     avoid: tuple | None = None) -> FlowPair:
    """Pure-junk flows (uniform random targets, confident everywhere).

    ``avoid = (source_xyz, target_xyz, transform, min_distance_m)`` makes
    the junk verified-wrong: any pixel whose lifted pair would agree with
    ``transform`` within ``min_distance_m`` is re-drawn (uniform targets
    occasionally hit a truly corresponding surface point by chance, which
    would be a genuine match, not junk). Stragglers after 20 rounds are
    invalidated.
    """
    rng = np.random.default_rng(seed)
    ha, wa = shape_a
    hb, wb = shape_b
    fwd = np.stack([rng.uniform(0, hb - 1, (ha, wa)),
                    rng.uniform(0, wb - 1, (ha, wa))], axis=2)
    bwd = np.stack([rng.uniform(0, ha - 1, (hb, wb)),
                    rng.uniform(0, wa - 1, (hb, wb))], axis=2)
    invalid = None
    if avoid is not None:
        from .raster import bilinear_sample_many

        source_xyz, target_xyz, transform, min_distance = avoid
        rows, cols = np.mgrid[0:ha, 0:wa]
        src_pts, src_ok = bilinear_sample_many(source_xyz, rows.ravel(),
                                               cols.ravel())
        mapped = transform.apply(src_pts)
        flat = fwd.reshape(-1, 2)
        for _ in range(20):
            tgt_pts, tgt_ok = bilinear_sample_many(target_xyz, flat[:, 0],
                                                   flat[:, 1])
            close = (src_ok & tgt_ok &
                     (np.linalg.norm(mapped - tgt_pts, axis=1) < min_distance))
            if not close.any():
                break
            n_close = int(close.sum())
            flat[close] = np.stack([rng.uniform(0, hb - 1, n_close),
                                    rng.uniform(0, wb - 1, n_close)], axis=1)
        else:
            invalid = close.reshape(ha, wa)
        fwd = flat.reshape(ha, wa, 2)
    return FlowPair(_flow(fwd, invalid=invalid), _flow(bwd),
                    _conf(shape_a), _conf(shape_b))
