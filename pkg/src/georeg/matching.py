"""Cyclic-consistency filtering of dense flow fields into sparse matches.

A dense matcher yields, for an image pair (A, B), a forward flow on A's grid
(absolute target coordinates in B, channel 0 = row, channel 1 = col) and a
backward flow on B's grid, each with a confidence map. A match at pixel x of
A is kept when the round trip through B lands back within a pixel threshold
of x: the residual is ``||backward(forward(x)) - x||`` with the backward
flow sampled bilinearly at the landing position.

Flows store absolute coordinates rather than displacements so A and B may
differ in resolution.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateInput, EmptyResult, ShapeMismatch
from .raster import Raster, Semantic, bilinear_sample_many

__all__ = [
    "FlowPair",
    "MatchSet",
    "FilterConfig",
    "cyclic_residuals",
    "filter_matches",
]

RESIDUAL_NODATA = -1.0

MATCH_CSV_HEADER = "row_a,col_a,row_b,col_b,residual_px,confidence"


def _check_confidence(raster: Raster, name: str) -> None:
    if raster.semantic is not Semantic.CONFIDENCE1:
        raise ShapeMismatch(f"{name} must be a CONFIDENCE1 raster")
    valid = raster.data[~raster.nodata_mask()]
    if valid.size and (valid.min() < 0.0 or valid.max() > 1.0):
        raise DegenerateInput(f"{name} values must lie in [0, 1]")


@dataclass(frozen=True)
class FlowPair:
    """Forward/backward dense flows plus confidences for one image pair.

    ``model_confidence`` (optional rendering-reliability map) may describe
    either image: an A-shaped raster gates matches at their source pixel, a
    B-shaped one at the forward-flow landing position. When A and B share a
    shape it is taken to be on A.
    """

    forward: Raster
    backward: Raster
    conf_forward: Raster
    conf_backward: Raster
    model_confidence: Raster | None = None

    def __post_init__(self):
        if self.forward.semantic is not Semantic.FLOW2 or \
                self.backward.semantic is not Semantic.FLOW2:
            raise ShapeMismatch("forward/backward must be FLOW2 rasters")
        if self.conf_forward.data.shape[:2] != self.shape_a:
            raise ShapeMismatch("conf_forward shape differs from forward flow")
        if self.conf_backward.data.shape[:2] != self.shape_b:
            raise ShapeMismatch("conf_backward shape differs from backward flow")
        _check_confidence(self.conf_forward, "conf_forward")
        _check_confidence(self.conf_backward, "conf_backward")
        if self.model_confidence is not None:
            _check_confidence(self.model_confidence, "model_confidence")
            mc_shape = self.model_confidence.data.shape[:2]
            if mc_shape not in (self.shape_a, self.shape_b):
                raise ShapeMismatch(
                    f"model_confidence shape {mc_shape} matches neither image")

    @property
    def shape_a(self) -> tuple[int, int]:
        return self.forward.data.shape[:2]

    @property
    def shape_b(self) -> tuple[int, int]:
        return self.backward.data.shape[:2]


@dataclass(frozen=True)
class FilterConfig:
    """Gates and subsampling for match filtering.

    Defaults are the pipeline's operating point: 2 px round-trip threshold,
    0.2 matcher-confidence floor, and at most 5000 surviving matches.
    """

    cyclic_threshold_px: float = 2.0
    min_confidence: float = 0.2
    min_model_confidence: float = 0.5
    max_matches: int = 5000
    seed: int = 0

    def __post_init__(self):
        if self.cyclic_threshold_px <= 0:
            raise DegenerateInput("cyclic_threshold_px must be > 0")
        if not (0.0 <= self.min_confidence <= 1.0 and
                0.0 <= self.min_model_confidence <= 1.0):
            raise DegenerateInput("confidence thresholds must lie in [0, 1]")
        if self.max_matches < 3:
            raise DegenerateInput("max_matches must be >= 3")


@dataclass(frozen=True)
class MatchSet:
    """Filtered subpixel correspondences between two images."""

    coords_a: np.ndarray   # (N, 2) row, col in image A
    coords_b: np.ndarray   # (N, 2) row, col in image B
    residual_px: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.coords_a, dtype=np.float64).reshape(-1, 2)
        b = np.asarray(self.coords_b, dtype=np.float64).reshape(-1, 2)
        res = np.asarray(self.residual_px, dtype=np.float64).reshape(-1)
        conf = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
        if not (len(a) == len(b) == len(res) == len(conf)):
            raise ShapeMismatch("MatchSet arrays disagree in length")
        if np.any(res < 0):
            raise DegenerateInput("cyclic residuals must be nonnegative")
        for arr in (a, b, res, conf):
            arr.flags.writeable = False
        object.__setattr__(self, "coords_a", a)
        object.__setattr__(self, "coords_b", b)
        object.__setattr__(self, "residual_px", res)
        object.__setattr__(self, "confidence", conf)

    def __len__(self) -> int:
        return len(self.coords_a)

    def to_csv(self, path) -> None:
        buf = io.StringIO()
        buf.write(MATCH_CSV_HEADER + "\n")
        for (ra, ca), (rb, cb), res, conf in zip(
                self.coords_a, self.coords_b, self.residual_px, self.confidence):
            buf.write(f"{ra:.6f},{ca:.6f},{rb:.6f},{cb:.6f},{res:.6f},{conf:.6f}\n")
        Path(path).write_text(buf.getvalue())

    @classmethod
    def from_csv(cls, path) -> "MatchSet":
        rows = Path(path).read_text().strip().splitlines()
        if not rows or rows[0] != MATCH_CSV_HEADER:
            raise ShapeMismatch(f"{path}: missing match CSV header")
        values = np.array([[float(v) for v in line.split(",")] for line in rows[1:]],
                          dtype=np.float64).reshape(-1, 6)
        return cls(values[:, 0:2], values[:, 2:4], values[:, 4], values[:, 5])


def cyclic_residuals(fp: FlowPair) -> Raster:
    """Per-pixel round-trip residual on image A, in pixels.

    Pixels whose forward flow is nodata, lands outside image B, or lands
    where the backward flow has no valid neighbor get the nodata sentinel.
    """
    h, w = fp.shape_a
    grid_r, grid_c = np.mgrid[0:h, 0:w]
    fwd = fp.forward.data.reshape(-1, 2).astype(np.float64)
    fwd_ok = ~fp.forward.nodata_mask().reshape(-1)

    back, back_ok = bilinear_sample_many(fp.backward, fwd[:, 0], fwd[:, 1])
    valid = fwd_ok & back_ok
    delta = back - np.stack([grid_r.reshape(-1), grid_c.reshape(-1)], axis=1)
    residual = np.where(valid, np.hypot(delta[:, 0], delta[:, 1]), RESIDUAL_NODATA)
    return Raster(residual.reshape(h, w, 1).astype(np.float32),
                  Semantic.CONFIDENCE1, nodata_value=RESIDUAL_NODATA)


def _model_confidence_gate(fp: FlowPair, fwd: np.ndarray,
                           threshold: float) -> np.ndarray:
    mc = fp.model_confidence
    if mc is None:
        return np.ones(fwd.shape[0], dtype=bool)
    if mc.data.shape[:2] == fp.shape_a:
        values = mc.data.reshape(-1).astype(np.float64)
        ok = ~mc.nodata_mask().reshape(-1)
    else:
        sampled, ok = bilinear_sample_many(mc, fwd[:, 0], fwd[:, 1])
        values = sampled[:, 0]
    return ok & (values >= threshold)


def filter_matches(fp: FlowPair, cfg: FilterConfig = FilterConfig()) -> MatchSet:
    """Keep cyclically consistent, confident matches; cap their count.

    All gates are conjunctive: round-trip residual <= cyclic_threshold_px,
    matcher confidence >= min_confidence, and (when a model-confidence map
    is present) model confidence >= min_model_confidence. Survivors beyond
    max_matches are subsampled uniformly without replacement with the
    configured seed; output order is row-major over image A either way.

    Raises EmptyResult when nothing survives.
    """
    h, w = fp.shape_a
    residual_raster = cyclic_residuals(fp)
    residual = residual_raster.data.reshape(-1).astype(np.float64)
    res_ok = ~residual_raster.nodata_mask().reshape(-1)

    conf = fp.conf_forward.data.reshape(-1).astype(np.float64)
    conf_ok = ~fp.conf_forward.nodata_mask().reshape(-1)
    fwd = fp.forward.data.reshape(-1, 2).astype(np.float64)

    keep = (res_ok & (residual <= cfg.cyclic_threshold_px) &
            conf_ok & (conf >= cfg.min_confidence) &
            _model_confidence_gate(fp, fwd, cfg.min_model_confidence))

    idx = np.flatnonzero(keep)
    if idx.size == 0:
        raise EmptyResult("no matches survive cyclic/confidence gates")
    if idx.size > cfg.max_matches:
        chosen = np.random.default_rng(cfg.seed).permutation(idx.size)[:cfg.max_matches]
        idx = np.sort(idx[chosen])

    coords_a = np.stack([idx // w, idx % w], axis=1).astype(np.float64)
    return MatchSet(coords_a, fwd[idx], residual[idx], conf[idx])
