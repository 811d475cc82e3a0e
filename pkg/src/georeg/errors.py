"""Exception hierarchy shared by every pipeline stage.

All recoverable data-dependent failures derive from :class:`GeoregError`,
which carries a machine-readable ``code`` (the class name) and an optional
``stage`` label attached by orchestration code so callers can tell *where*
in a multi-stage run the data gave out.
"""

from __future__ import annotations


class GeoregError(Exception):
    """Base class for data-dependent registration failures."""

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage

    @property
    def code(self) -> str:
        return type(self).__name__

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "code": self.code,
            "message": str(self),
        }


class DegenerateInput(GeoregError):
    """Input geometry cannot constrain the model (too few / collinear points)."""


class NoConsensus(GeoregError):
    """RANSAC found no model supported by at least a minimal inlier set."""


class FormatError(GeoregError):
    """Raster container has a bad magic string or unsupported version."""


class ShapeError(GeoregError):
    """Raster payload length disagrees with its declared dimensions."""


class OutOfBounds(GeoregError):
    """Requested sample position lies outside the raster sample domain."""


class NoDataAtPixel(GeoregError):
    """Every neighbor contributing to an interpolated sample is nodata."""


class ShapeMismatch(GeoregError):
    """Paired arrays or rasters disagree in shape."""


class EmptyResult(GeoregError):
    """A filtering stage discarded every candidate; registration cannot proceed."""


class TooFewGroundPoints(GeoregError):
    """Fewer than three points survived ground-mask selection."""


class NoIntersections(GeoregError):
    """No sampled camera ray intersects the fitted plane."""


class Ambiguous(GeoregError):
    """Up-vector vote is an exact tie; orientation cannot be decided."""


class NoCandidates(GeoregError):
    """No (ground image, tile) pair produced a fittable candidate transform."""


class NoCorrespondences(GeoregError):
    """No point pairs fall within the association radius at the initial pose."""


class Diverged(GeoregError):
    """Robust objective increased over three consecutive refinement iterations."""


class SingularCovariance(GeoregError):
    """Covariance matrix is not symmetric positive-definite."""
