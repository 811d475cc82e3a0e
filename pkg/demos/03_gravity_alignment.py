"""Recovering "up" for a reconstruction born in an arbitrary frame.

A tilted scene is built from ground points (noisy, with rooftop outliers)
and a ring of cameras. A RANSAC plane fit finds the ground up to a sign;
camera rays must hit the plane from above, which fixes the sign; the final
product is the rotation that makes +z point up.
"""

import numpy as np

from georeg.gravity import (
    CameraPose,
    GroundPointSet,
    disambiguate_up,
    ransac_plane,
    z_up_rotation,
)

rng = np.random.default_rng(5)

true_up = np.array([0.25, -0.1, 0.96])
true_up /= np.linalg.norm(true_up)
tilt = z_up_rotation(true_up).rotation.T     # world frame of the tilted model
print("true up vector:", np.round(true_up, 4).tolist())

ground = (tilt @ np.column_stack([
    rng.uniform(-60, 60, (3000, 2)), np.zeros((3000, 1))]).T).T
ground += rng.normal(0, 0.3, ground.shape)
roofs = (tilt @ np.column_stack([
    rng.uniform(-20, 20, (400, 2)), np.full((400, 1), 15.0)]).T).T
points = GroundPointSet(np.vstack([ground, roofs]))

plane, inliers = ransac_plane(points, inlier_threshold=1.0, seed=2)
print(f"plane fit: {int(inliers.sum())}/{len(points)} inliers "
      "(rooftop points rejected)")

cameras = [CameraPose.look_at(
    tilt @ np.array([80 * np.sin(a), 80 * np.cos(a), 90.0]), [0, 0, 0], f"c{k}")
    for k, a in enumerate(np.radians(np.arange(0, 360, 30)))]
up = disambiguate_up(plane, cameras)
angle = np.degrees(np.arccos(np.clip(up @ true_up, -1, 1)))
print(f"disambiguated up, {angle:.4f} deg from truth")

rotation = z_up_rotation(up)
aligned = rotation.apply(points.points[inliers])
print(f"after z-up rotation the ground is level: "
      f"z spread {aligned[:, 2].std():.3f} m (noise was 0.3 m)")
