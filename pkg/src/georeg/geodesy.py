"""WGS84 geodetic to local east-north-up conversion.

Conversions run through ECEF in extended precision (``np.longdouble``)
because ECEF magnitudes near the Earth's surface put one float64 ulp at
about a nanometer: staying in float64 would leave ENU round trips a few
nanometers off, while extended precision holds them near 1e-12 m.
:class:`GeodeticPoint` therefore keeps whatever numeric type it is given
rather than coercing to float, so points produced by :func:`enu_to_geodetic`
retain full precision when converted back.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateInput

__all__ = [
    "WGS84_A",
    "WGS84_F",
    "GeodeticPoint",
    "geodetic_to_ecef",
    "ecef_to_geodetic",
    "geodetic_to_enu",
    "enu_to_geodetic",
    "load_truth_cameras",
]

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563

_LD = np.longdouble
_A = _LD(WGS84_A)
_E2 = _LD(WGS84_F) * (_LD(2.0) - _LD(WGS84_F))


@dataclass(frozen=True)
class GeodeticPoint:
    """WGS84 latitude/longitude in degrees, ellipsoidal altitude in meters."""

    latitude_deg: float
    longitude_deg: float
    altitude_m: float = 0.0

    def __post_init__(self):
        if not abs(float(self.latitude_deg)) <= 90.0:
            raise DegenerateInput(f"latitude {self.latitude_deg} outside [-90, 90]")
        if not abs(float(self.longitude_deg)) <= 180.0:
            raise DegenerateInput(f"longitude {self.longitude_deg} outside [-180, 180]")

    def to_dict(self) -> dict:
        return {"lat": float(self.latitude_deg), "lon": float(self.longitude_deg),
                "alt": float(self.altitude_m)}

    @classmethod
    def from_dict(cls, d: dict) -> "GeodeticPoint":
        return cls(d["lat"], d["lon"], d.get("alt", 0.0))


def _ecef_ld(p: GeodeticPoint) -> np.ndarray:
    lat = np.radians(_LD(p.latitude_deg))
    lon = np.radians(_LD(p.longitude_deg))
    alt = _LD(p.altitude_m)
    sin_lat, cos_lat = np.sin(lat), np.cos(lat)
    n = _A / np.sqrt(_LD(1.0) - _E2 * sin_lat * sin_lat)
    return np.array([
        (n + alt) * cos_lat * np.cos(lon),
        (n + alt) * cos_lat * np.sin(lon),
        (n * (_LD(1.0) - _E2) + alt) * sin_lat,
    ], dtype=_LD)


def _enu_rotation_ld(anchor: GeodeticPoint) -> np.ndarray:
    lat = np.radians(_LD(anchor.latitude_deg))
    lon = np.radians(_LD(anchor.longitude_deg))
    sin_lat, cos_lat = np.sin(lat), np.cos(lat)
    sin_lon, cos_lon = np.sin(lon), np.cos(lon)
    zero = _LD(0.0)
    return np.array([
        [-sin_lon, cos_lon, zero],
        [-sin_lat * cos_lon, -sin_lat * sin_lon, cos_lat],
        [cos_lat * cos_lon, cos_lat * sin_lon, sin_lat],
    ], dtype=_LD)


def geodetic_to_ecef(p: GeodeticPoint) -> np.ndarray:
    """WGS84 geodetic to earth-centered earth-fixed meters, (3,) float64."""
    return _ecef_ld(p).astype(np.float64)


def _ecef_to_geodetic_ld(xyz: np.ndarray) -> tuple[np.longdouble, ...]:
    x, y, z = (_LD(v) for v in xyz)
    lon = np.arctan2(y, x)
    hypot_xy = np.hypot(x, y)
    lat = np.arctan2(z, hypot_xy * (_LD(1.0) - _E2))
    alt = _LD(0.0)
    for _ in range(30):
        sin_lat = np.sin(lat)
        n = _A / np.sqrt(_LD(1.0) - _E2 * sin_lat * sin_lat)
        if abs(float(lat)) < 1.3:
            alt = hypot_xy / np.cos(lat) - n
        else:
            alt = z / sin_lat - n * (_LD(1.0) - _E2)
        new_lat = np.arctan2(z, hypot_xy * (_LD(1.0) - _E2 * n / (n + alt)))
        done = abs(new_lat - lat) < _LD(1e-20)
        lat = new_lat
        if done:
            break
    return np.degrees(lat), np.degrees(lon), alt


def ecef_to_geodetic(xyz) -> GeodeticPoint:
    """Inverse of :func:`geodetic_to_ecef` (iterative latitude recovery)."""
    lat, lon, alt = _ecef_to_geodetic_ld(np.asarray(xyz))
    return GeodeticPoint(lat, lon, alt)


def geodetic_to_enu(p: GeodeticPoint, anchor: GeodeticPoint) -> np.ndarray:
    """Position of ``p`` in the local east/north/up frame at ``anchor``, meters."""
    delta = _ecef_ld(p) - _ecef_ld(anchor)
    return (_enu_rotation_ld(anchor) @ delta).astype(np.float64)


def enu_to_geodetic(enu, anchor: GeodeticPoint) -> GeodeticPoint:
    """Geodetic coordinates of a local east/north/up offset from ``anchor``."""
    offset = np.asarray(enu).astype(_LD).reshape(3)
    ecef = _ecef_ld(anchor) + _enu_rotation_ld(anchor).T @ offset
    lat, lon, alt = _ecef_to_geodetic_ld(ecef)
    return GeodeticPoint(lat, lon, alt)


def load_truth_cameras(path) -> tuple[dict[str, GeodeticPoint], GeodeticPoint | None]:
    """Ground-truth camera positions from JSON.

    Accepts either a bare list of ``{id, lat, lon, alt}`` records or an
    object ``{"anchor": {lat, lon, alt}, "cameras": [...]}``; returns the
    id->point mapping and the anchor when present.
    """
    blob = json.loads(Path(path).read_text())
    anchor = None
    records = blob
    if isinstance(blob, dict):
        if "anchor" in blob:
            anchor = GeodeticPoint.from_dict(blob["anchor"])
        records = blob["cameras"]
    cameras = {rec["id"]: GeodeticPoint.from_dict(rec) for rec in records}
    return cameras, anchor
