# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Point painting: append per-pixel segmentation scores to LiDAR points."""

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from ..core.errors import DimensionMismatch, InvalidScore, ShapeMismatch
from ..core.geometry import project_points
from ..core.logging import get_logger
from ..core.types import Calibration, PointCloud

logger = get_logger(__name__)

SCORE_CLASSES = ("pedestrian", "cyclist", "car", "background")
NUM_CLASSES = len(SCORE_CLASSES)
BACKGROUND_SCORES = np.array([0.0, 0.0, 0.0, 1.0], dtype=np.float32)
SCORE_RANGE_TOL = 1e-6
SCORE_SUM_TOL = 1e-4


def _check_score_sums(scores: np.ndarray, what: str) -> None:
    if scores.size == 0:
        return
    if np.any(scores < -SCORE_RANGE_TOL) or np.any(scores > 1 + SCORE_RANGE_TOL):
        raise InvalidScore(f"{what} scores must lie in [0, 1]")
    sums = scores.sum(axis=-1, dtype=np.float64)
    if np.any(np.abs(sums - 1.0) > SCORE_SUM_TOL):
        raise InvalidScore(f"{what} scores must sum to 1 per entry")


class SegScoreMap(BaseModel):
    """Per-pixel class probabilities (pedestrian, cyclist, car, background).

    ``scores`` has shape (height, width, 4).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    scores: np.ndarray

    @field_validator("scores", mode="before")
    @classmethod
    def validate_scores(cls, v):
        """Validate an (H, W, 4) probability image."""
        arr = np.asarray(v, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != NUM_CLASSES:
            raise ShapeMismatch(f"Score map must have shape (H, W, 4), got {arr.shape}")
        _check_score_sums(arr, "Score map")
        return np.ascontiguousarray(arr)

    @property
    def width(self) -> int:
        return int(self.scores.shape[1])

    @property
    def height(self) -> int:
        return int(self.scores.shape[0])


class PaintedPointCloud(BaseModel):
    """Points with appended class scores, stored as (N, 8) float32.

    Columns: x, y, z, r, s_ped, s_cyc, s_car, s_bg.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    points: np.ndarray

    @field_validator("points", mode="before")
    @classmethod
    def validate_points(cls, v):
        """Validate an (N, 8) painted cloud."""
        arr = np.asarray(v, dtype=np.float32)
        if arr.size == 0:
            return np.zeros((0, 8), dtype=np.float32)
        if arr.ndim != 2 or arr.shape[1] != 4 + NUM_CLASSES:
            raise ShapeMismatch(f"Painted cloud must have shape (N, 8), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Painted cloud contains non-finite values")
        _check_score_sums(arr[:, 4:], "Painted point")
        return np.ascontiguousarray(arr)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def xyzr(self) -> np.ndarray:
        return self.points[:, :4]

    @property
    def scores(self) -> np.ndarray:
        return self.points[:, 4:]

    def strip(self) -> PointCloud:
        """Drop the scores, recovering the geometric cloud."""
        return PointCloud(points=self.points[:, :4].copy())

    def subset(self, mask: np.ndarray) -> "PaintedPointCloud":
        """Order-preserving selection by boolean mask or index array."""
        return PaintedPointCloud.model_construct(points=np.ascontiguousarray(self.points[mask]))


def complete_background(three_scores: np.ndarray) -> SegScoreMap:
    """
    Build a four-class score map from pedestrian, cyclist and car probabilities.

    Background is one minus the three foreground scores, clamped at zero; when
    the clamp fires the foreground scores are renormalised to sum to one.

    Args:
        three_scores: (H, W, 3) per-pixel (ped, cyc, car) probabilities

    Returns:
        SegScoreMap with the background channel appended

    Raises:
        InvalidScore: If any input lies outside [0, 1] beyond 1e-6
    """
    fg = np.asarray(three_scores, dtype=np.float64)
    if fg.ndim != 3 or fg.shape[2] != 3:
        raise ShapeMismatch(f"Expected (H, W, 3) scores, got shape {fg.shape}")
    if not np.all(np.isfinite(fg)):
        raise InvalidScore("Scores must be finite")
    if np.any(fg < -SCORE_RANGE_TOL) or np.any(fg > 1 + SCORE_RANGE_TOL):
        raise InvalidScore("Foreground scores must lie in [0, 1]")

    fg = np.clip(fg, 0.0, 1.0)
    total = fg.sum(axis=-1, keepdims=True)
    overflow = total > 1.0
    fg = np.where(overflow, fg / np.where(overflow, total, 1.0), fg)
    background = np.clip(1.0 - fg.sum(axis=-1, keepdims=True), 0.0, 1.0)
    background = np.where(overflow, 0.0, background)

    return SegScoreMap(scores=np.concatenate([fg, background], axis=-1).astype(np.float32))


def paint(cloud: PointCloud, seg: SegScoreMap, calib: Calibration) -> PaintedPointCloud:
    """
    Append the score vector of each point's projected pixel.

    Points that project into the image take the scores of pixel
    (floor(u), floor(v)); points outside the image or behind the camera take
    the pure-background vector (0, 0, 0, 1).

    Args:
        cloud: LiDAR points
        seg: Segmentation scores of the frame's image
        calib: Frame calibration

    Returns:
        PaintedPointCloud with the same order and cardinality as ``cloud``

    Raises:
        DimensionMismatch: If score map and calibration disagree on image size
    """
    if seg.width != calib.image_width or seg.height != calib.image_height:
        raise DimensionMismatch(
            f"Score map is {seg.width}x{seg.height} but calibration image is "
            f"{calib.image_width}x{calib.image_height}"
        )

    projection = project_points(cloud, calib)
    scores = np.tile(BACKGROUND_SCORES, (len(cloud), 1))

    visible = projection.in_image
    if np.any(visible):
        cols = np.floor(projection.u[visible]).astype(np.int64)
        rows = np.floor(projection.v[visible]).astype(np.int64)
        scores[visible] = seg.scores[rows, cols]

    logger.debug(f"Painted {int(visible.sum())}/{len(cloud)} points from the image")
    painted = np.concatenate([cloud.points, scores], axis=1)
    return PaintedPointCloud.model_construct(points=np.ascontiguousarray(painted, dtype=np.float32))
