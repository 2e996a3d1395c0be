# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Configuration models for SemanticVoxels."""

import math
import os
from typing import Literal

from pydantic import BaseModel, Field, field_validator, model_validator

FusionScheme = Literal["early", "middle", "late", "none"]

THREADS_ENV_VAR = "SEMVOX_THREADS"


def _cell_count(extent: float, size: float) -> int:
    return int(round(extent / size))


class GridConfig(BaseModel):
    """Crop range and pillar/voxel grid of the BEV canvas."""

    x_range: tuple[float, float] = Field(default=(0.0, 48.0), description="Crop range along x (m)")
    y_range: tuple[float, float] = Field(
        default=(-20.0, 20.0), description="Crop range along y (m)"
    )
    z_range: tuple[float, float] = Field(default=(-2.5, 0.5), description="Crop range along z (m)")
    pillar_size: float = Field(default=0.16, description="Pillar edge length in the xy plane (m)")
    z_resolution: float = Field(default=0.3, description="Semantic voxel height (m)")
    max_pillars: int = Field(default=12000, description="Maximum number of pillars P")
    max_points_per_pillar: int = Field(default=100, description="Maximum points per pillar N")
    rng_seed: int = Field(default=0, description="Seed for per-pillar point sampling")

    @field_validator("x_range", "y_range", "z_range")
    @classmethod
    def validate_range(cls, v):
        """Validate that a crop range is non-degenerate."""
        lo, hi = v
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
            raise ValueError(f"Range must be finite and increasing, got {v}")
        return v

    @field_validator("pillar_size", "z_resolution")
    @classmethod
    def validate_cell_size(cls, v):
        """Validate positive cell sizes."""
        if v <= 0:
            raise ValueError("Cell size must be positive")
        return v

    @field_validator("max_pillars", "max_points_per_pillar")
    @classmethod
    def validate_positive_int(cls, v):
        """Validate positive integers."""
        if v <= 0:
            raise ValueError("Value must be positive")
        return v

    @model_validator(mode="after")
    def validate_divisibility(self):
        """Range extents must be whole multiples of the cell sizes."""
        checks = [
            ("x_range", self.x_range, self.pillar_size),
            ("y_range", self.y_range, self.pillar_size),
            ("z_range", self.z_range, self.z_resolution),
        ]
        for name, (lo, hi), size in checks:
            cells = (hi - lo) / size
            if abs(cells - round(cells)) > 1e-9 * max(1.0, cells):
                raise ValueError(f"{name} extent {hi - lo} is not divisible by cell size {size}")
        return self

    @property
    def nx(self) -> int:
        """Number of x cells (canvas height H)."""
        return _cell_count(self.x_range[1] - self.x_range[0], self.pillar_size)

    @property
    def ny(self) -> int:
        """Number of y cells (canvas width W)."""
        return _cell_count(self.y_range[1] - self.y_range[0], self.pillar_size)

    @property
    def nz(self) -> int:
        """Number of semantic z voxels Z."""
        return _cell_count(self.z_range[1] - self.z_range[0], self.z_resolution)


class PointNetConfig(BaseModel):
    """Simplified PointNet of the geometric branch."""

    in_features: int = Field(default=9, description="Decorated point dimension D")
    channels: int = Field(default=64, description="Pillar feature channels C")
    bn_eps: float = Field(default=1e-3, description="Batch-norm epsilon")

    @field_validator("in_features")
    @classmethod
    def validate_in_features(cls, v):
        """The geometric decoration is fixed at nine channels."""
        if v != 9:
            raise ValueError("Decorated point dimension must be 9")
        return v


class SemanticConfig(BaseModel):
    """Semantic voxel branch."""

    num_classes: int = Field(default=4, description="Painted score classes")
    channels: int = Field(default=8, description="Aggregated semantic channels K")

    @field_validator("num_classes", "channels")
    @classmethod
    def validate_positive_int(cls, v):
        """Validate positive integers."""
        if v <= 0:
            raise ValueError("Value must be positive")
        return v


class BackboneConfig(BaseModel):
    """Three-block 2D backbone with per-block upsampling."""

    fusion_scheme: FusionScheme = Field(
        default="early", description="Where semantic features join the network"
    )
    layer_nums: list[int] = Field(default_factory=lambda: [4, 6, 6], description="Convs per block")
    layer_strides: list[int] = Field(
        default_factory=lambda: [1, 2, 2], description="Stride of each block's first conv"
    )
    num_filters: list[int] = Field(
        default_factory=lambda: [64, 128, 256], description="Channels per block"
    )
    upsample_strides: list[int] = Field(
        default_factory=lambda: [1, 2, 4], description="Transposed-conv stride per block"
    )
    num_upsample_filters: list[int] = Field(
        default_factory=lambda: [128, 128, 128], description="Upsampled channels per block"
    )
    bn_eps: float = Field(default=1e-3, description="Batch-norm epsilon")

    @field_validator(
        "layer_nums", "layer_strides", "num_filters", "upsample_strides", "num_upsample_filters"
    )
    @classmethod
    def validate_block_list(cls, v):
        """Validate per-block lists."""
        if len(v) != 3:
            raise ValueError("Backbone has exactly three blocks")
        if any(item <= 0 for item in v):
            raise ValueError("Block values must be positive")
        return v

    @model_validator(mode="after")
    def validate_resolution(self):
        """Each block must be restored to block-1 resolution by its upsampling."""
        cumulative = 1
        for stride, up in zip(self.layer_strides, self.upsample_strides):
            cumulative *= stride
            if up != cumulative:
                raise ValueError(
                    f"Upsample strides {self.upsample_strides} do not undo "
                    f"layer strides {self.layer_strides}"
                )
        if self.layer_strides[0] != 1:
            raise ValueError("The first block keeps the feature map size (stride 1)")
        return self

    @property
    def out_channels(self) -> int:
        """Channels of the concatenated backbone output (before late fusion)."""
        return sum(self.num_upsample_filters)


class AnchorConfig(BaseModel):
    """Pedestrian anchor prior."""

    width: float = Field(default=0.6, description="Anchor width w (m)")
    length: float = Field(default=0.8, description="Anchor length l (m)")
    height: float = Field(default=1.73, description="Anchor height h (m)")
    z_center: float = Field(default=-0.6, description="Anchor center z (m)")
    rotations: list[float] = Field(
        default_factory=lambda: [0.0, math.pi / 2], description="Anchor yaw angles (rad)"
    )

    @field_validator("width", "length", "height")
    @classmethod
    def validate_positive(cls, v):
        """Validate positive dimensions."""
        if v <= 0:
            raise ValueError("Anchor dimensions must be positive")
        return v

    @field_validator("rotations")
    @classmethod
    def validate_rotations(cls, v):
        """At least one anchor orientation is required."""
        if not v:
            raise ValueError("At least one anchor rotation is required")
        return v

    @property
    def num_anchors(self) -> int:
        """Anchors per BEV cell A."""
        return len(self.rotations)


class LossConfig(BaseModel):
    """Loss weights, focal parameters and anchor matching thresholds."""

    focal_alpha: float = Field(default=0.25, description="Focal loss alpha")
    focal_gamma: float = Field(default=2.0, description="Focal loss gamma")
    beta_reg: float = Field(default=2.0, description="Regression loss weight beta1")
    beta_dir: float = Field(default=0.2, description="Direction loss weight beta2")
    beta_cls: float = Field(default=1.0, description="Classification loss weight beta3")
    match_iou_pos: float = Field(default=0.5, description="BEV IoU for positive anchors")
    match_iou_neg: float = Field(default=0.35, description="BEV IoU below which anchors are negative")

    @field_validator("focal_alpha")
    @classmethod
    def validate_alpha(cls, v):
        """Validate alpha in (0, 1)."""
        if not 0 < v < 1:
            raise ValueError("focal_alpha must lie in (0, 1)")
        return v

    @field_validator("focal_gamma")
    @classmethod
    def validate_gamma(cls, v):
        """Validate gamma >= 0."""
        if v < 0:
            raise ValueError("focal_gamma must be non-negative")
        return v

    @field_validator("beta_reg", "beta_dir", "beta_cls")
    @classmethod
    def validate_beta(cls, v):
        """Validate positive loss weights."""
        if v <= 0:
            raise ValueError("Loss weights must be positive")
        return v

    @model_validator(mode="after")
    def validate_thresholds(self):
        """Require 0 <= neg < pos <= 1."""
        if not 0 <= self.match_iou_neg < self.match_iou_pos <= 1:
            raise ValueError("Matching thresholds must satisfy 0 <= neg < pos <= 1")
        return self


class EvalConfig(BaseModel):
    """Decoding, suppression and AP protocol settings."""

    iou_threshold: float = Field(default=0.5, description="Match IoU for AP")
    nms_iou_threshold: float = Field(default=0.5, description="Rotated BEV NMS threshold")
    score_threshold: float = Field(default=0.05, description="Minimum detection score")
    num_recall_points: Literal[11, 40] = Field(default=40, description="AP interpolation points")

    @field_validator("iou_threshold", "nms_iou_threshold", "score_threshold")
    @classmethod
    def validate_unit_interval(cls, v):
        """Validate thresholds in [0, 1]."""
        if not 0 <= v <= 1:
            raise ValueError("Threshold must lie in [0, 1]")
        return v


class LoggingConfig(BaseModel):
    """Logging configuration."""

    level: str = Field(default="INFO", description="Logging level")
    format: str = Field(
        default="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        description="Log message format",
    )
    file: str | None = Field(default=None, description="Log file path")

    @field_validator("level")
    @classmethod
    def validate_level(cls, v):
        """Validate logging level."""
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in valid_levels:
            raise ValueError(f"Level must be one of: {valid_levels}")
        return v.upper()


class RuntimeConfig(BaseModel):
    """Worker parallelism for batch directories."""

    threads: int = Field(default=1, description="Worker threads for batch processing")

    @field_validator("threads")
    @classmethod
    def validate_threads(cls, v):
        """Validate positive thread count."""
        if v <= 0:
            raise ValueError("Value must be positive")
        return v

    def effective_threads(self) -> int:
        """Thread count after applying the SEMVOX_THREADS cap."""
        cap = os.getenv(THREADS_ENV_VAR)
        if cap is None:
            return self.threads
        try:
            return max(1, min(self.threads, int(cap)))
        except ValueError:
            return self.threads


class Config(BaseModel):
    """Main configuration class for SemanticVoxels."""

    grid: GridConfig = Field(default_factory=GridConfig)
    pointnet: PointNetConfig = Field(default_factory=PointNetConfig)
    semantic: SemanticConfig = Field(default_factory=SemanticConfig)
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    anchors: AnchorConfig = Field(default_factory=AnchorConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)
    runtime: RuntimeConfig = Field(default_factory=RuntimeConfig)

    @field_validator("anchors")
    @classmethod
    def validate_anchor_height(cls, v, info):
        """Anchor center must lie inside the vertical crop range."""
        if hasattr(info, "data") and "grid" in info.data:
            lo, hi = info.data["grid"].z_range
            if not lo <= v.z_center < hi:
                raise ValueError(f"Anchor z_center {v.z_center} is outside z_range {(lo, hi)}")
        return v


# Predefined configurations
KITTI_DEFAULTS: dict = {
    "grid": {
        "x_range": [0.0, 48.0],
        "y_range": [-20.0, 20.0],
        "z_range": [-2.5, 0.5],
        "pillar_size": 0.16,
        "z_resolution": 0.3,
        "max_pillars": 12000,
        "max_points_per_pillar": 100,
    },
    "backbone": {
        "layer_nums": [4, 6, 6],
        "num_filters": [64, 128, 256],
        "num_upsample_filters": [128, 128, 128],
    },
}

DESK_DEFAULTS: dict = {
    "grid": {
        "x_range": [0.0, 15.36],
        "y_range": [-7.68, 7.68],
        "z_range": [-2.5, 0.5],
        "pillar_size": 0.16,
        "z_resolution": 0.3,
        "max_pillars": 4000,
        "max_points_per_pillar": 32,
    },
    "backbone": {
        "layer_nums": [1, 1, 1],
        "num_filters": [32, 32, 32],
        "num_upsample_filters": [32, 32, 32],
    },
}
