"""Independent WGS84 reference implementation used only to check the library.

Scalar math module formulas, written stand-alone on purpose: shares no code
with the package. Do not import georeg here.
"""

import math

SEMI_MAJOR_M = 6378137.0
FLATTENING = 1.0 / 298.257223563
ECC_SQ = FLATTENING * (2.0 - FLATTENING)


def llh_to_ecef(lat_deg, lon_deg, alt_m):
    lat = math.radians(lat_deg)
    lon = math.radians(lon_deg)
    sin_lat = math.sin(lat)
    cos_lat = math.cos(lat)
    prime_vertical = SEMI_MAJOR_M / math.sqrt(1.0 - ECC_SQ * sin_lat * sin_lat)
    x = (prime_vertical + alt_m) * cos_lat * math.cos(lon)
    y = (prime_vertical + alt_m) * cos_lat * math.sin(lon)
    z = (prime_vertical * (1.0 - ECC_SQ) + alt_m) * sin_lat
    return x, y, z


def ecef_to_enu(x, y, z, lat0_deg, lon0_deg, alt0_m):
    x0, y0, z0 = llh_to_ecef(lat0_deg, lon0_deg, alt0_m)
    dx, dy, dz = x - x0, y - y0, z - z0
    lat0 = math.radians(lat0_deg)
    lon0 = math.radians(lon0_deg)
    sin_lat, cos_lat = math.sin(lat0), math.cos(lat0)
    sin_lon, cos_lon = math.sin(lon0), math.cos(lon0)
    east = -sin_lon * dx + cos_lon * dy
    north = -cos_lon * sin_lat * dx - sin_lat * sin_lon * dy + cos_lat * dz
    up = cos_lat * cos_lon * dx + cos_lat * sin_lon * dy + sin_lat * dz
    return east, north, up


def llh_to_enu(lat_deg, lon_deg, alt_m, lat0_deg, lon0_deg, alt0_m):
    x, y, z = llh_to_ecef(lat_deg, lon_deg, alt_m)
    return ecef_to_enu(x, y, z, lat0_deg, lon0_deg, alt0_m)
