"""Robust Sim(3) georegistration toolkit.

Registers 3D reconstructions against georeferenced surface models: dense
2D matches are filtered by cyclic consistency, lifted to 3D through
per-pixel coordinate rasters, fit with a RANSAC-wrapped closed-form
similarity estimator, refined by robust ICP, and scored against
ground-truth camera positions.
"""

from .errors import (
    Ambiguous,
    DegenerateInput,
    Diverged,
    EmptyResult,
    FormatError,
    GeoregError,
    NoCandidates,
    NoConsensus,
    NoCorrespondences,
    NoDataAtPixel,
    NoIntersections,
    OutOfBounds,
    ShapeError,
    ShapeMismatch,
    SingularCovariance,
    TooFewGroundPoints,
)
from .geodesy import (
    GeodeticPoint,
    ecef_to_geodetic,
    enu_to_geodetic,
    geodetic_to_ecef,
    geodetic_to_enu,
)
from .gravity import (
    CameraPose,
    GroundPointSet,
    PlaneModel,
    disambiguate_up,
    ransac_plane,
    select_ground_points,
    z_up_rotation,
)
from .icp import IcpConfig, IcpResult, icp_refine
from .lifting import LiftedMatches, lift_xyz_to_dsm, lift_xyz_to_xyz
from .matching import (
    FilterConfig,
    FlowPair,
    MatchSet,
    cyclic_residuals,
    filter_matches,
)
from .metrics import RegistrationReport, evaluate, normalize_by_standoff
from .pipeline import (
    AirToSatResult,
    CandidateTransform,
    GateDecision,
    GroundToAirResult,
    SubgraphGateConfig,
    gate_subgraph,
    register_air_to_sat,
    register_ground_to_air,
)
from .raster import (
    DsmCovariance,
    GeoTransform,
    Raster,
    Semantic,
    bilinear_sample,
    dsm_pixel_to_xyz,
    read_raster,
    read_sidecar,
    write_raster,
    write_sidecar,
    xyz_image_lookup,
)
from .synth import (
    BoxSpec,
    NoiseSpec,
    SceneBundle,
    SceneSpec,
    YawSim3Spec,
    corrupt_flows,
    generate_scene,
    random_flow_pair,
)
from .tiling import ObliqueViewSet, TileGrid, make_tile_grid, oblique_poses
from .transforms import (
    Correspondences3D,
    RansacConfig,
    Sim3Transform,
    count_inliers,
    ransac_sim3,
    rotation_angle_deg,
    umeyama,
)

__version__ = "0.1.0"
