"""Tile grids over rendered views, and the oblique viewpoint ring.

Wide renders of the airborne model cannot be matched whole against
narrow-field ground images, so each render is subdivided into fixed-size
overlapping tiles (300 px, 25% overlap by default). The renders themselves
come from eight oblique viewpoints 45 degrees apart in azimuth at a fixed
45 degree depression, plus a nadir view; with the default grid that is
9 x 81 = 729 tiles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateInput
from .gravity import CameraPose

__all__ = [
    "TileGrid",
    "ObliqueViewSet",
    "make_tile_grid",
    "oblique_poses",
]


@dataclass(frozen=True)
class TileGrid:
    """Edge-aligned overlapping tile layout for one render."""

    image_height: int
    image_width: int
    tile_size: int
    overlap_fraction: float
    tile_height: int
    tile_width: int
    tiles: tuple[tuple[str, int, int], ...]   # (render_id, row_off, col_off)

    def __len__(self) -> int:
        return len(self.tiles)

    def covers_image(self) -> bool:
        covered = np.zeros((self.image_height, self.image_width), dtype=bool)
        for _, row, col in self.tiles:
            covered[row:row + self.tile_height, col:col + self.tile_width] = True
        return bool(covered.all())

    def to_dict(self) -> dict:
        return {
            "image_height": self.image_height,
            "image_width": self.image_width,
            "tile_size": self.tile_size,
            "overlap_fraction": self.overlap_fraction,
            "tile_height": self.tile_height,
            "tile_width": self.tile_width,
            "tiles": [list(t) for t in self.tiles],
        }


def _axis_offsets(dim: int, tile: int, stride: int) -> list[int]:
    if tile >= dim:
        return [0]
    offsets = list(range(0, dim - tile + 1, stride))
    if offsets[-1] + tile < dim:
        offsets.append(dim - tile)
    return offsets


def make_tile_grid(image_height: int, image_width: int, tile_size: int = 300,
                   overlap_fraction: float = 0.25,
                   render_id: str = "") -> TileGrid:
    """Overlapping tiles covering the full image.

    Stride is round(tile_size * (1 - overlap)); offsets advance by the
    stride and a final edge-aligned tile is added per axis when the last
    regular one stops short of the border. Tiles larger than the image
    clamp to a single full-image tile on that axis.
    """
    if image_height < 1 or image_width < 1 or tile_size < 1:
        raise DegenerateInput("image dimensions and tile_size must be >= 1")
    if not 0.0 <= overlap_fraction < 1.0:
        raise DegenerateInput("overlap_fraction must lie in [0, 1)")
    stride = max(1, round(tile_size * (1.0 - overlap_fraction)))
    tile_h = min(tile_size, image_height)
    tile_w = min(tile_size, image_width)
    tiles = tuple(
        (render_id, row, col)
        for row in _axis_offsets(image_height, tile_h, stride)
        for col in _axis_offsets(image_width, tile_w, stride)
    )
    return TileGrid(image_height, image_width, tile_size, overlap_fraction,
                    tile_h, tile_w, tiles)


@dataclass(frozen=True)
class ObliqueViewSet:
    """Ring of oblique render poses (plus optional nadir) around a scene.

    Poses look at the scene center from a slant range of sqrt(2) x radius,
    so at the default 45 degree depression each camera sits one radius out
    and one radius up. Framing is orthographic with half-extent equal to
    the scene radius (a radius-r scene fits from any direction).
    """

    poses: tuple[CameraPose, ...]
    azimuth_step_deg: float
    depression_deg: float
    resolution_px: int
    half_extent_m: float
    azimuths_deg: tuple[float, ...] = field(default=())

    def to_spec_list(self) -> list[dict]:
        out = []
        for pose in self.poses:
            d = pose.to_dict()
            out.append({
                "render_id": d["id"],
                "center_xyz": d["center_xyz"],
                "rotation_quaternion_wxyz": d["rotation_quaternion_wxyz"],
                "projection": {"type": "orthographic",
                               "half_extent_m": self.half_extent_m},
                "resolution_px": self.resolution_px,
            })
        return out

    def save_spec(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_spec_list(), indent=2) + "\n")


def oblique_poses(scene_center, scene_radius: float,
                  azimuth_step_deg: float = 45.0, depression_deg: float = 45.0,
                  resolution_px: int = 2048,
                  include_nadir: bool = True) -> ObliqueViewSet:
    """Oblique viewpoint ring for rendering the airborne model."""
    if scene_radius <= 0:
        raise DegenerateInput("scene_radius must be > 0")
    if not 0.0 < depression_deg <= 90.0:
        raise DegenerateInput("depression_deg must lie in (0, 90]")
    center = np.asarray(scene_center, dtype=np.float64).reshape(3)
    slant = math.sqrt(2.0) * scene_radius
    dep = math.radians(depression_deg)
    count = int(round(360.0 / azimuth_step_deg))
    azimuths = tuple(k * azimuth_step_deg for k in range(count))

    poses = []
    for azimuth in azimuths:
        az = math.radians(azimuth)
        eye = center + slant * np.array([
            math.cos(dep) * math.sin(az),
            math.cos(dep) * math.cos(az),
            math.sin(dep),
        ])
        poses.append(CameraPose.look_at(eye, center, f"oblique_{int(azimuth):03d}"))
    if include_nadir:
        eye = center + np.array([0.0, 0.0, slant])
        poses.append(CameraPose.look_at(eye, center, "nadir"))
    return ObliqueViewSet(tuple(poses), azimuth_step_deg, depression_deg,
                          resolution_px, float(scene_radius), azimuths)
