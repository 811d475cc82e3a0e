"""Lift filtered 2D matches to 3D correspondences.

Each side of a match is resolved to a 3D point: through a per-pixel
coordinate raster (bilinear lookup at the subpixel match position), or
through a DSM plus geotransform (planimetric position from the pixel-center
convention, height interpolated from the DSM). Pairs that land on nodata or
outside a raster's sample domain are dropped and counted, never fatal
unless every pair is lost.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyResult, ShapeMismatch
from .matching import MatchSet
from .raster import GeoTransform, Raster, bilinear_sample_many
from .transforms import Correspondences3D

__all__ = ["LiftedMatches", "lift_xyz_to_dsm", "lift_xyz_to_xyz"]

LIFT_CSV_HEADER = "xa,ya,za,xb,yb,zb"


@dataclass(frozen=True)
class LiftedMatches:
    """3D correspondences plus the pixel pairs they came from."""

    corr: Correspondences3D
    provenance: np.ndarray   # (N, 4): row_a, col_a, row_b, col_b
    dropped_count: int

    def __post_init__(self):
        prov = np.asarray(self.provenance, dtype=np.float64).reshape(-1, 4)
        if len(prov) != len(self.corr):
            raise ShapeMismatch("provenance length differs from correspondences")
        prov.flags.writeable = False
        object.__setattr__(self, "provenance", prov)

    def __len__(self) -> int:
        return len(self.corr)

    def to_csv(self, path) -> None:
        buf = io.StringIO()
        buf.write(LIFT_CSV_HEADER + "\n")
        for a, b in zip(self.corr.source, self.corr.target):
            buf.write(f"{a[0]:.6f},{a[1]:.6f},{a[2]:.6f},"
                      f"{b[0]:.6f},{b[1]:.6f},{b[2]:.6f}\n")
        Path(path).write_text(buf.getvalue())


def _keep(matches: MatchSet, side_a: np.ndarray, side_b: np.ndarray,
          valid: np.ndarray) -> LiftedMatches:
    if not valid.any():
        raise EmptyResult("every match was dropped during lifting")
    provenance = np.hstack([matches.coords_a[valid], matches.coords_b[valid]])
    return LiftedMatches(
        Correspondences3D(side_a[valid], side_b[valid]),
        provenance,
        dropped_count=int(len(matches) - valid.sum()),
    )


def lift_xyz_to_xyz(matches: MatchSet, xyz_a: Raster,
                    xyz_b: Raster) -> LiftedMatches:
    """Lift both sides through per-pixel coordinate rasters."""
    if xyz_a.channels != 3 or xyz_b.channels != 3:
        raise ShapeMismatch("xyz rasters must have 3 channels")
    if len(matches) == 0:
        raise EmptyResult("match set is empty")
    a_vals, a_ok = bilinear_sample_many(
        xyz_a, matches.coords_a[:, 0], matches.coords_a[:, 1])
    b_vals, b_ok = bilinear_sample_many(
        xyz_b, matches.coords_b[:, 0], matches.coords_b[:, 1])
    return _keep(matches, a_vals, b_vals, a_ok & b_ok)


def lift_xyz_to_dsm(matches: MatchSet, xyz_a: Raster, dsm: Raster,
                    geo: GeoTransform) -> LiftedMatches:
    """Lift side A through an xyz raster and side B through a DSM."""
    if xyz_a.channels != 3:
        raise ShapeMismatch("xyz raster must have 3 channels")
    if dsm.channels != 1:
        raise ShapeMismatch("DSM raster must have 1 channel")
    if len(matches) == 0:
        raise EmptyResult("match set is empty")
    a_vals, a_ok = bilinear_sample_many(
        xyz_a, matches.coords_a[:, 0], matches.coords_a[:, 1])
    heights, b_ok = bilinear_sample_many(
        dsm, matches.coords_b[:, 0], matches.coords_b[:, 1])
    easting = geo.origin_easting + (matches.coords_b[:, 1] + 0.5) * geo.pixel_size_x
    northing = geo.origin_northing + (matches.coords_b[:, 0] + 0.5) * geo.pixel_size_y
    b_vals = np.column_stack([easting, northing, heights[:, 0]])
    return _keep(matches, a_vals, b_vals, a_ok & b_ok)
