"""Image-shaped data: flows, confidence maps, XYZ maps, DSMs, masks.

Rasters travel in the fixed-layout "GRR1" binary container so every stage of
the pipeline exchanges bit-exact float32 data without a codec dependency:

    bytes 0..3    magic "GRR1"
    bytes 4..23   five little-endian uint32: version (=1), height, width,
                  channels, semantic code
    bytes 24..31  two little-endian float32: nodata flag (0 or 1), nodata value
    bytes 32..    height*width*channels little-endian float32, row-major,
                  channel-interleaved

Georeferencing and covariance ride in a ``<name>.meta.json`` sidecar next to
the container.

Conventions used everywhere in this package:

* Pixel (row, col) covers the world area centered at
  ``origin + (col + 0.5) * pixel_size_x`` / ``origin + (row + 0.5) * pixel_size_y``.
* Subpixel positions are in pixel-index coordinates where integer values sit
  on pixel centers; the valid sample domain is [0, H-1] x [0, W-1].
* Bilinear samples skip nodata neighbors and renormalize the remaining
  weights; a sample whose contributing neighbors are all nodata raises.
* A pixel is nodata when any of its channels equals the sentinel exactly.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateInput,
    FormatError,
    NoDataAtPixel,
    OutOfBounds,
    ShapeError,
    ShapeMismatch,
    SingularCovariance,
)

__all__ = [
    "Semantic",
    "Raster",
    "GeoTransform",
    "DsmCovariance",
    "read_raster",
    "write_raster",
    "read_sidecar",
    "write_sidecar",
    "sidecar_path",
    "bilinear_sample",
    "xyz_image_lookup",
    "dsm_pixel_to_xyz",
]

MAGIC = b"GRR1"
VERSION = 1
_HEADER = struct.Struct("<4s5I2f")


class Semantic(Enum):
    """What a raster's channels mean; fixes the channel count."""

    FLOW2 = 1
    CONFIDENCE1 = 2
    XYZ3 = 3
    DSM1 = 4
    MASK1 = 5
    RGB3 = 6

    @property
    def channels(self) -> int:
        return {1: 2, 2: 1, 3: 3, 4: 1, 5: 1, 6: 3}[self.value]


@dataclass(frozen=True)
class Raster:
    """H x W x C float32 image with an optional nodata sentinel.

    The payload is frozen at construction (rasters are shared across
    threads). A contiguous float32 input array is aliased, not copied, and
    becomes read-only too; pass a copy to keep a private mutable version.
    """

    data: np.ndarray
    semantic: Semantic
    nodata_value: float | None = None

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ShapeMismatch(f"raster data must be HxWxC, got shape {data.shape}")
        if data.shape[2] != self.semantic.channels:
            raise ShapeMismatch(
                f"{self.semantic.name} requires {self.semantic.channels} channels, "
                f"got {data.shape[2]}")
        nodata = self.nodata_value
        if nodata is not None:
            nodata = float(np.float32(nodata))
            valid = data[~np.any(data == np.float32(nodata), axis=2)]
        else:
            valid = data
        if not np.all(np.isfinite(valid)):
            raise DegenerateInput("raster contains non-finite non-nodata values")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "nodata_value", nodata)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def nodata_mask(self) -> np.ndarray:
        """(H, W) bool, True where the pixel is nodata."""
        if self.nodata_value is None:
            return np.zeros(self.data.shape[:2], dtype=bool)
        return np.any(self.data == np.float32(self.nodata_value), axis=2)


@dataclass(frozen=True)
class GeoTransform:
    """Maps pixel indices of a north-up raster to a local metric frame.

    The easting/northing frame is anchored on the globe by
    ``geodetic_anchor`` (latitude deg, longitude deg, altitude m), which
    downstream geodetic conversion uses as the local origin.
    """

    origin_easting: float
    origin_northing: float
    pixel_size_x: float
    pixel_size_y: float
    crs_label: str = "local"
    geodetic_anchor: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.pixel_size_x <= 0:
            raise DegenerateInput("pixel_size_x must be > 0")
        if self.pixel_size_y == 0:
            raise DegenerateInput("pixel_size_y must be nonzero")

    def pixel_to_world(self, row: float, col: float) -> tuple[float, float]:
        """(easting, northing) of a subpixel position, pixel-center convention."""
        return (
            self.origin_easting + (col + 0.5) * self.pixel_size_x,
            self.origin_northing + (row + 0.5) * self.pixel_size_y,
        )

    def world_to_pixel(self, easting: float, northing: float) -> tuple[float, float]:
        """(row, col) subpixel position of a world point."""
        return (
            (northing - self.origin_northing) / self.pixel_size_y - 0.5,
            (easting - self.origin_easting) / self.pixel_size_x - 0.5,
        )

    def to_dict(self) -> dict:
        d = {
            "origin_easting": self.origin_easting,
            "origin_northing": self.origin_northing,
            "pixel_size_x": self.pixel_size_x,
            "pixel_size_y": self.pixel_size_y,
            "crs_label": self.crs_label,
        }
        if self.geodetic_anchor is not None:
            lat, lon, alt = self.geodetic_anchor
            d["geodetic_anchor"] = {
                "latitude_deg": lat, "longitude_deg": lon, "altitude_m": alt}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeoTransform":
        anchor = d.get("geodetic_anchor")
        if anchor is not None:
            anchor = (anchor["latitude_deg"], anchor["longitude_deg"],
                      anchor["altitude_m"])
        return cls(
            float(d["origin_easting"]), float(d["origin_northing"]),
            float(d["pixel_size_x"]), float(d["pixel_size_y"]),
            crs_label=d.get("crs_label", "local"),
            geodetic_anchor=anchor,
        )


@dataclass(frozen=True)
class DsmCovariance:
    """3x3 SPD covariance (m^2) describing DSM geopositioning uncertainty."""

    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.shape != (3, 3):
            raise ShapeMismatch(f"covariance must be 3x3, got {sigma.shape}")
        if np.max(np.abs(sigma - sigma.T)) > 1e-12:
            raise SingularCovariance("covariance is not symmetric within 1e-12")
        if np.min(np.linalg.eigvalsh(sigma)) <= 0:
            raise SingularCovariance("covariance has a non-positive eigenvalue")
        sigma.flags.writeable = False
        object.__setattr__(self, "sigma", sigma)

    def to_dict(self) -> dict:
        return {"sigma_m2": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DsmCovariance":
        return cls(np.asarray(d["sigma_m2"], dtype=np.float64))


def write_raster(raster: Raster, path) -> None:
    """Serialize to the GRR1 container; float32 payload round-trips bit-exactly."""
    has_nodata = raster.nodata_value is not None
    header = _HEADER.pack(
        MAGIC, VERSION, raster.height, raster.width, raster.channels,
        raster.semantic.value,
        1.0 if has_nodata else 0.0,
        raster.nodata_value if has_nodata else 0.0,
    )
    payload = raster.data.astype("<f4", copy=False).tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_raster(path) -> Raster:
    """Parse a GRR1 container written by :func:`write_raster`."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, height, width, channels, sem_code, nd_flag, nd_value = \
        _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    try:
        semantic = Semantic(sem_code)
    except ValueError:
        raise FormatError(f"{path}: unknown semantic code {sem_code}") from None
    expected = height * width * channels * 4
    payload = blob[_HEADER.size:]
    if len(payload) != expected:
        raise ShapeError(
            f"{path}: payload is {len(payload)} bytes, "
            f"expected {expected} for {height}x{width}x{channels}")
    data = np.frombuffer(payload, dtype="<f4").reshape(height, width, channels)
    return Raster(data, semantic, nodata_value=float(nd_value) if nd_flag else None)


def sidecar_path(path) -> Path:
    """``<name>.meta.json`` path next to a raster container."""
    p = Path(path)
    base = p.with_suffix("") if p.suffix == ".grr" else p
    return base.with_name(base.name + ".meta.json")


def write_sidecar(path, geo_transform: GeoTransform | None = None,
                  covariance: DsmCovariance | None = None,
                  provenance: dict | None = None) -> Path:
    """Write the metadata sidecar for the raster at ``path``; returns its path."""
    meta: dict = {}
    if geo_transform is not None:
        meta["geo_transform"] = geo_transform.to_dict()
    if covariance is not None:
        meta["dsm_covariance"] = covariance.to_dict()
    if provenance is not None:
        meta["provenance"] = provenance
    out = sidecar_path(path)
    out.write_text(json.dumps(meta, indent=2) + "\n")
    return out


def read_sidecar(path) -> tuple[GeoTransform | None, DsmCovariance | None, dict]:
    """Load (geo_transform, covariance, provenance) for the raster at ``path``."""
    p = sidecar_path(path)
    if not p.exists():
        return None, None, {}
    meta = json.loads(p.read_text())
    geo = meta.get("geo_transform")
    cov = meta.get("dsm_covariance")
    return (
        GeoTransform.from_dict(geo) if geo else None,
        DsmCovariance.from_dict(cov) if cov else None,
        meta.get("provenance", {}),
    )


def bilinear_sample(raster: Raster, row: float, col: float) -> np.ndarray:
    """Nodata-aware bilinear sample at a subpixel position; returns (C,) float64.

    Exact at integer positions (returns the stored value). Nodata neighbors
    are dropped and the remaining weights renormalized.

    Raises OutOfBounds outside [0, H-1] x [0, W-1] and NoDataAtPixel when
    every contributing neighbor is nodata.
    """
    h, w = raster.height, raster.width
    if not (math.isfinite(row) and math.isfinite(col)):
        raise OutOfBounds(f"non-finite sample position ({row}, {col})")
    if row < 0.0 or row > h - 1 or col < 0.0 or col > w - 1:
        raise OutOfBounds(
            f"sample ({row}, {col}) outside domain [0, {h - 1}] x [0, {w - 1}]")
    r0 = min(int(row), h - 1)
    c0 = min(int(col), w - 1)
    r1 = min(r0 + 1, h - 1)
    c1 = min(c0 + 1, w - 1)
    fr = row - r0
    fc = col - c0
    neighbors = ((r0, c0, (1 - fr) * (1 - fc)), (r0, c1, (1 - fr) * fc),
                 (r1, c0, fr * (1 - fc)), (r1, c1, fr * fc))

    nodata = raster.nodata_value
    total = 0.0
    acc = np.zeros(raster.channels, dtype=np.float64)
    for r, c, weight in neighbors:
        if weight == 0.0:
            continue
        value = raster.data[r, c]
        if nodata is not None and np.any(value == np.float32(nodata)):
            continue
        acc += weight * value.astype(np.float64)
        total += weight
    if total == 0.0:
        raise NoDataAtPixel(f"all neighbors of ({row}, {col}) are nodata")
    return acc / total


def bilinear_sample_many(raster: Raster, rows: np.ndarray,
                         cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`bilinear_sample` over arrays of positions.

    Returns (values (N, C) float64, valid (N,) bool); positions outside the
    sample domain or with no valid neighbor come back invalid instead of
    raising.
    """
    h, w = raster.height, raster.width
    rows = np.asarray(rows, dtype=np.float64).reshape(-1)
    cols = np.asarray(cols, dtype=np.float64).reshape(-1)
    in_bounds = (np.isfinite(rows) & np.isfinite(cols) &
                 (rows >= 0.0) & (rows <= h - 1) & (cols >= 0.0) & (cols <= w - 1))
    r = np.where(in_bounds, rows, 0.0)
    c = np.where(in_bounds, cols, 0.0)
    r0 = np.minimum(r.astype(np.int64), h - 1)
    c0 = np.minimum(c.astype(np.int64), w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = r - r0
    fc = c - c0

    data = raster.data.astype(np.float64)
    bad = raster.nodata_mask()
    acc = np.zeros((rows.size, raster.channels))
    total = np.zeros(rows.size)
    for rr, cc, weight in (
            (r0, c0, (1 - fr) * (1 - fc)),
            (r0, c1, (1 - fr) * fc),
            (r1, c0, fr * (1 - fc)),
            (r1, c1, fr * fc)):
        usable = weight * (~bad[rr, cc])
        acc += usable[:, None] * data[rr, cc]
        total += usable
    valid = in_bounds & (total > 0.0)
    safe = np.where(total > 0.0, total, 1.0)
    return acc / safe[:, None], valid


def xyz_image_lookup(xyz: Raster, px: tuple[float, float]) -> np.ndarray:
    """3D point stored at a subpixel position of a per-pixel-coordinates raster."""
    if xyz.channels != 3:
        raise ShapeMismatch(f"xyz raster must have 3 channels, got {xyz.channels}")
    return bilinear_sample(xyz, px[0], px[1])


def dsm_pixel_to_xyz(dsm: Raster, geo: GeoTransform,
                     px: tuple[float, float]) -> np.ndarray:
    """Lift a DSM subpixel position to (easting, northing, height)."""
    if dsm.channels != 1:
        raise ShapeMismatch(f"DSM raster must have 1 channel, got {dsm.channels}")
    height = bilinear_sample(dsm, px[0], px[1])[0]
    easting, northing = geo.pixel_to_world(px[0], px[1])
    return np.array([easting, northing, height])
