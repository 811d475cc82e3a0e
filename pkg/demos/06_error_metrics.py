"""Geopositioning error metrics and geodetic conversion.

Ground-truth camera positions arrive as WGS84 latitude/longitude/altitude;
they are converted to a local east-north-up frame and compared against
estimated positions. Absolute error mixes the DSM's own bias with the
registration error; subtracting the mean error (relative error) isolates
the non-systematic part, and the Mahalanobis distance says whether the
bias is plausible under the DSM's published uncertainty.
"""

import numpy as np

from georeg import (
    DsmCovariance,
    GeodeticPoint,
    enu_to_geodetic,
    evaluate,
    geodetic_to_enu,
    normalize_by_standoff,
)

anchor = GeodeticPoint(38.9, -77.03, 60.0)

rng = np.random.default_rng(3)
truth_enu = np.column_stack([rng.uniform(-200, 200, (25, 2)),
                             rng.uniform(40, 90, 25)])
truth_geodetic = [enu_to_geodetic(p, anchor) for p in truth_enu]
print("25 cameras, truth stored geodetically; first:",
      f"({float(truth_geodetic[0].latitude_deg):.6f} deg,",
      f"{float(truth_geodetic[0].longitude_deg):.6f} deg,",
      f"{float(truth_geodetic[0].altitude_m):.1f} m)")

# Estimated positions: a 1.2 m systematic bias (DSM-style) plus 0.3 m noise.
bias = np.array([0.9, -0.7, 0.4])
estimated = truth_enu + bias + rng.normal(0, 0.3, truth_enu.shape)

truth_back = np.stack([geodetic_to_enu(p, anchor) for p in truth_geodetic])
dsm_cov = DsmCovariance(np.diag([1.1, 1.1, 2.6]))
report = evaluate(estimated, truth_back, dsm_cov)

print(f"\nmean absolute error    {report.mean_absolute_error_m:.3f} m "
      f"(bias magnitude is {np.linalg.norm(bias):.3f} m)")
print(f"mean relative error    {report.mean_relative_error_m:.3f} m "
      "(bias removed; noise remains)")
print(f"median relative error  {report.median_relative_error_m:.3f} m")
print(f"mahalanobis distance   {report.mahalanobis_distance:.2f} "
      "(<~2: consistent with DSM uncertainty)")
print(f"CE90 / LE90            {report.ce90_m:.3f} / {report.le90_m:.3f} m")

standoff = 148.0
print(f"\nnormalized by a {standoff:.0f} m standoff: "
      f"{normalize_by_standoff(report, standoff):.5f} m per meter")
