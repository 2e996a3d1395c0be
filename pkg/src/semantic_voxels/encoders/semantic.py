# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Semantic branch: z-voxel class means stacked per pillar and mixed by a 1x1 layer."""

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from ..config.models import GridConfig
from ..core.errors import ShapeMismatch
from ..core.logging import get_logger
from ..core.types import FeatureMap
from .painting import NUM_CLASSES, PaintedPointCloud
from .pillars import bev_cell_indices, crop

logger = get_logger(__name__)


class SemanticVoxelGrid(BaseModel):
    """Occupied semantic voxels in (x_index, y_index, z_index) key order.

    ``mean_scores[i]`` is the mean class-score vector of the points inside
    voxel ``coords[i]`` and ``counts[i]`` how many points it holds.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    coords: np.ndarray
    mean_scores: np.ndarray
    counts: np.ndarray
    nz: int

    @model_validator(mode="after")
    def validate_layout(self):
        """Check matching lengths and non-empty voxels."""
        m = self.coords.shape[0]
        if self.coords.shape != (m, 3) or self.mean_scores.shape != (m, NUM_CLASSES):
            raise ShapeMismatch("Semantic grid buffers disagree on the voxel count")
        if self.counts.shape != (m,) or np.any(self.counts < 1):
            raise ShapeMismatch("Occupied voxels need a positive point count")
        return self

    def __len__(self) -> int:
        return int(self.coords.shape[0])


class SemanticAggParams(BaseModel):
    """1x1 aggregation from Z * 4 stacked channels to K outputs."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    weight: np.ndarray
    bias: np.ndarray

    @field_validator("weight", "bias", mode="before")
    @classmethod
    def validate_finite(cls, v, info):
        """Coerce to finite float32 arrays."""
        arr = np.asarray(v, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{info.field_name} contains non-finite values")
        return arr

    @model_validator(mode="after")
    def validate_layout(self):
        """Weight is (K, Z * 4) and bias (K,)."""
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeMismatch(
                f"Aggregation weight {self.weight.shape} and bias {self.bias.shape} disagree"
            )
        return self

    @property
    def channels(self) -> int:
        return int(self.weight.shape[0])


def voxelize_semantic(cloud: PaintedPointCloud, cfg: GridConfig) -> SemanticVoxelGrid:
    """
    Average painted scores inside each occupied semantic voxel.

    Voxels share the pillar xy cells and split each pillar into
    ``cfg.nz`` slices of ``cfg.z_resolution``.

    Args:
        cloud: Painted cloud (points outside the crop box are ignored)
        cfg: Grid configuration

    Returns:
        SemanticVoxelGrid with empty voxels absent
    """
    cloud = crop(cloud, cfg)
    if len(cloud) == 0:
        return SemanticVoxelGrid(
            coords=np.zeros((0, 3), dtype=np.int64),
            mean_scores=np.zeros((0, NUM_CLASSES), dtype=np.float32),
            counts=np.zeros(0, dtype=np.int64),
            nz=cfg.nz,
        )

    pts = cloud.points.astype(np.float64)
    cells = bev_cell_indices(pts[:, :2], cfg)
    zi = np.floor((pts[:, 2] - cfg.z_range[0]) / cfg.z_resolution).astype(np.int64)
    zi = np.clip(zi, 0, cfg.nz - 1)

    keys = (cells[:, 0] * cfg.ny + cells[:, 1]) * cfg.nz + zi
    unique_keys, inverse = np.unique(keys, return_inverse=True)
    inverse = inverse.ravel()
    counts = np.bincount(inverse, minlength=unique_keys.size)

    scores = pts[:, 4:]
    sums = np.stack(
        [
            np.bincount(inverse, weights=scores[:, c], minlength=unique_keys.size)
            for c in range(NUM_CLASSES)
        ],
        axis=1,
    )
    means = sums / counts[:, None]

    coords = np.stack(
        [unique_keys // (cfg.ny * cfg.nz), (unique_keys // cfg.nz) % cfg.ny, unique_keys % cfg.nz],
        axis=1,
    )
    logger.debug(f"Voxelized {len(cloud)} painted points into {unique_keys.size} semantic voxels")
    return SemanticVoxelGrid(
        coords=coords.astype(np.int64),
        mean_scores=means.astype(np.float32),
        counts=counts.astype(np.int64),
        nz=cfg.nz,
    )


def stack_semantic(grid: SemanticVoxelGrid, cfg: GridConfig) -> np.ndarray:
    """
    Stack voxel means along z into a (Z * 4, nx, ny) canvas.

    Channel ``z_index * 4 + class`` holds the mean score of that class in that
    slice; empty voxels stay zero.
    """
    stacked = np.zeros((grid.nz * NUM_CLASSES, cfg.nx, cfg.ny), dtype=np.float32)
    if len(grid) == 0:
        return stacked
    xi, yi, zi = grid.coords[:, 0], grid.coords[:, 1], grid.coords[:, 2]
    for c in range(NUM_CLASSES):
        stacked[zi * NUM_CLASSES + c, xi, yi] = grid.mean_scores[:, c]
    return stacked


def stack_and_aggregate(
    grid: SemanticVoxelGrid, params: SemanticAggParams, cfg: GridConfig
) -> FeatureMap:
    """
    Semantic BEV features: stacked voxel means through an affine 1x1 layer.

    Args:
        grid: Occupied semantic voxels
        params: Aggregation weights (K, Z * 4) and bias (K,)
        cfg: Grid configuration

    Returns:
        FeatureMap of shape (K, nx, ny); empty cells equal the bias

    Raises:
        ShapeMismatch: If the weight does not consume Z * 4 channels
    """
    stacked = stack_semantic(grid, cfg)
    if params.weight.shape[1] != stacked.shape[0]:
        raise ShapeMismatch(
            f"Aggregation expects {params.weight.shape[1]} channels, stack has {stacked.shape[0]}"
        )
    out = np.tensordot(params.weight, stacked, axes=(1, 0))
    out += params.bias[:, None, None]
    return FeatureMap(values=out)
