# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Shared geometric types: points, calibration, oriented boxes and BEV feature maps."""

import math
from collections.abc import Iterable, Iterator

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .errors import ShapeMismatch

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    wrapped = (theta + math.pi) % TWO_PI - math.pi
    # float modulo can land exactly on +pi for inputs just below -pi
    if wrapped >= math.pi:
        wrapped -= TWO_PI
    return wrapped


def normalize_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorised normalize_angle."""
    wrapped = np.mod(theta + np.pi, TWO_PI) - np.pi
    return np.where(wrapped >= np.pi, wrapped - TWO_PI, wrapped)


def _as_float_matrix(value, shape: tuple[int, int], name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != shape:
        raise ShapeMismatch(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


class Point(BaseModel):
    """A single LiDAR return in the sensor frame."""

    model_config = ConfigDict(frozen=True)

    x: float = Field(description="Forward (m)")
    y: float = Field(description="Left (m)")
    z: float = Field(description="Up (m)")
    r: float = Field(default=0.0, description="Reflectance in [0, 1]")

    @field_validator("x", "y", "z", "r")
    @classmethod
    def validate_finite(cls, v):
        """Validate finite coordinates."""
        if not math.isfinite(v):
            raise ValueError("Point fields must be finite")
        return v


class PointCloud(BaseModel):
    """Ordered (x, y, z, r) points stored as an (N, 4) float32 array."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    points: np.ndarray = Field(default_factory=lambda: np.zeros((0, 4), dtype=np.float32))

    @field_validator("points", mode="before")
    @classmethod
    def validate_points(cls, v):
        """Coerce to a finite (N, 4) float32 array."""
        arr = np.asarray(v, dtype=np.float32)
        if arr.size == 0:
            return np.zeros((0, 4), dtype=np.float32)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ShapeMismatch(f"Point cloud must have shape (N, 4), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Point cloud contains non-finite values")
        return np.ascontiguousarray(arr)

    @classmethod
    def from_points(cls, points: Iterable[Point]) -> "PointCloud":
        """Build a cloud from Point models, preserving order."""
        return cls(points=[[p.x, p.y, p.z, p.r] for p in points])

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def iter_points(self) -> Iterator[Point]:
        """Iterate the cloud as Point models."""
        for x, y, z, r in self.points.tolist():
            yield Point(x=x, y=y, z=z, r=r)


class Calibration(BaseModel):
    """LiDAR-to-image projection chain of one frame.

    A LiDAR point p (homogeneous) maps to pixels as
    ``cam_to_image @ rectification @ velo_to_cam @ p``.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    velo_to_cam: np.ndarray = Field(description="4x4 LiDAR to camera transform")
    cam_to_image: np.ndarray = Field(description="3x4 camera projection matrix (P2)")
    rectification: np.ndarray = Field(description="4x4 rectifying rotation (R0_rect)")
    image_width: int = Field(description="Image width in pixels")
    image_height: int = Field(description="Image height in pixels")

    @field_validator("velo_to_cam", "rectification", mode="before")
    @classmethod
    def validate_homogeneous(cls, v, info):
        """Validate a finite 4x4 homogeneous transform."""
        arr = _as_float_matrix(v, (4, 4), info.field_name)
        if not np.allclose(arr[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError(f"{info.field_name} bottom row must be (0, 0, 0, 1)")
        return arr

    @field_validator("cam_to_image", mode="before")
    @classmethod
    def validate_projection(cls, v):
        """Validate a finite 3x4 projection matrix."""
        return _as_float_matrix(v, (3, 4), "cam_to_image")

    @field_validator("image_width", "image_height")
    @classmethod
    def validate_image_size(cls, v):
        """Validate positive image dimensions."""
        if v <= 0:
            raise ValueError("Image dimensions must be positive")
        return v

    @classmethod
    def identity(cls, image_width: int, image_height: int) -> "Calibration":
        """Identity transforms with cam_to_image = [I|0]."""
        return cls(
            velo_to_cam=np.eye(4),
            cam_to_image=np.eye(4)[:3],
            rectification=np.eye(4),
            image_width=image_width,
            image_height=image_height,
        )

    def velo_to_rect(self) -> np.ndarray:
        """4x4 transform from LiDAR to the rectified camera frame."""
        return self.rectification @ self.velo_to_cam

    def rect_to_velo(self) -> np.ndarray:
        """4x4 transform from the rectified camera frame back to LiDAR."""
        return np.linalg.inv(self.velo_to_rect())


class Box3D(BaseModel):
    """Oriented 3D box in the LiDAR frame; z is the geometric center."""

    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    z: float
    l: float  # noqa: E741
    w: float
    h: float
    theta: float = 0.0

    @field_validator("x", "y", "z")
    @classmethod
    def validate_center(cls, v):
        """Validate finite center."""
        if not math.isfinite(v):
            raise ValueError("Box center must be finite")
        return v

    @field_validator("l", "w", "h")
    @classmethod
    def validate_dimension(cls, v):
        """Validate strictly positive dimensions."""
        if not (math.isfinite(v) and v > 0):
            raise ValueError("Box dimensions must be positive")
        return v

    @field_validator("theta")
    @classmethod
    def validate_theta(cls, v):
        """Normalise yaw into [-pi, pi)."""
        if not math.isfinite(v):
            raise ValueError("Box yaw must be finite")
        return normalize_angle(v)

    @classmethod
    def from_array(cls, values: Iterable[float]) -> "Box3D":
        """Build from (x, y, z, l, w, h, theta)."""
        x, y, z, l, w, h, theta = (float(v) for v in values)  # noqa: E741
        return cls(x=x, y=y, z=z, l=l, w=w, h=h, theta=theta)

    def to_array(self) -> np.ndarray:
        """(x, y, z, l, w, h, theta) as float64."""
        return np.array([self.x, self.y, self.z, self.l, self.w, self.h, self.theta])

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    @property
    def bottom_z(self) -> float:
        return self.z - self.h / 2


def boxes_to_array(boxes: Iterable[Box3D]) -> np.ndarray:
    """Stack boxes into an (M, 7) float64 array."""
    rows = [box.to_array() for box in boxes]
    if not rows:
        return np.zeros((0, 7))
    return np.stack(rows)


class FeatureMap(BaseModel):
    """Dense BEV feature grid stored channels-first as (C, H, W) float32.

    H counts x cells and W counts y cells; cell (x_index, y_index) is
    ``values[:, x_index, y_index]``.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def validate_values(cls, v):
        """Coerce to a finite (C, H, W) float32 array."""
        arr = np.asarray(v, dtype=np.float32)
        if arr.ndim != 3:
            raise ShapeMismatch(f"Feature map must be (C, H, W), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Feature map contains non-finite values")
        return np.ascontiguousarray(arr)

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> "FeatureMap":
        return cls(values=np.zeros((channels, height, width), dtype=np.float32))

    @property
    def channels(self) -> int:
        return int(self.values.shape[0])

    @property
    def height(self) -> int:
        return int(self.values.shape[1])

    @property
    def width(self) -> int:
        return int(self.values.shape[2])

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.height, self.width
