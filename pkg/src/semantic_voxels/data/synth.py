# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Deterministic synthetic street scenes with pedestrians and pole-like confusers.

Pedestrians are box-shaped point clusters of anchor scale standing on the
ground plane; poles are narrow tall cylinders that look similar in a sparse
scan. The segmentation score map is rendered from the objects' projected
image boxes, far to near, with pedestrian pixels labelled correctly at the
requested fidelity.
"""

import math

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from ..core.geometry import image_bbox, project_points
from ..core.logging import get_logger
from ..core.types import Box3D, Calibration, PointCloud
from ..encoders.painting import complete_background
from .kitti import KITTI_IMAGE_HEIGHT, KITTI_IMAGE_WIDTH, PEDESTRIAN, ObjectLabel
from .scene import SceneBundle

logger = get_logger(__name__)

GROUND_Z = -1.73
FOCAL_LENGTH = 721.5377
PRINCIPAL_POINT = (609.5593, 172.854)
POLE_TYPE = "Pole"
RENDER_MARGIN = 0.1
MIN_SEPARATION = 1.2
MAX_PLACEMENT_TRIES = 200


def kitti_like_calibration(
    image_width: int = KITTI_IMAGE_WIDTH, image_height: int = KITTI_IMAGE_HEIGHT
) -> Calibration:
    """Front camera at the LiDAR origin with KITTI-like intrinsics."""
    cx, cy = PRINCIPAL_POINT
    cam_to_image = np.array(
        [[FOCAL_LENGTH, 0.0, cx, 0.0], [0.0, FOCAL_LENGTH, cy, 0.0], [0.0, 0.0, 1.0, 0.0]]
    )
    # LiDAR x forward, y left, z up -> camera x right, y down, z forward
    velo_to_cam = np.array(
        [[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
    )
    return Calibration(
        velo_to_cam=velo_to_cam,
        cam_to_image=cam_to_image,
        rectification=np.eye(4),
        image_width=image_width,
        image_height=image_height,
    )


class SynthSceneSpec(BaseModel):
    """Recipe of one synthetic frame."""

    seed: int = Field(default=0, description="Generator seed")
    num_pedestrians: int = Field(default=3, description="Pedestrians to place")
    num_poles: int = Field(default=2, description="Poles and signage posts to place")
    num_clutter: int = Field(default=200, description="Scattered background points")
    ground_points: int = Field(default=3000, description="Ground-plane returns")
    noise: float = Field(default=0.02, description="Point position noise std (m)")
    fidelity: float = Field(
        default=1.0, description="Probability a pedestrian pixel is labelled pedestrian"
    )
    x_range: tuple[float, float] = Field(default=(6.0, 40.0), description="Object placement range along x")
    y_range: tuple[float, float] = Field(default=(-12.0, 12.0), description="Object placement range along y")
    point_density: float = Field(default=4000.0, description="Object point count scale (points at 1 m)")

    @field_validator("num_pedestrians", "num_poles", "num_clutter", "ground_points")
    @classmethod
    def validate_count(cls, v):
        """Counts are non-negative."""
        if v < 0:
            raise ValueError("Counts must be non-negative")
        return v

    @field_validator("fidelity")
    @classmethod
    def validate_fidelity(cls, v):
        """Fidelity is a probability."""
        if not 0.0 <= v <= 1.0:
            raise ValueError("fidelity must lie in [0, 1]")
        return v

    @field_validator("noise", "point_density")
    @classmethod
    def validate_non_negative(cls, v):
        """Validate non-negative scales."""
        if v < 0:
            raise ValueError("Value must be non-negative")
        return v

    @model_validator(mode="after")
    def validate_ranges(self):
        """Placement ranges are increasing and in front of the sensor."""
        if not 0 < self.x_range[0] < self.x_range[1] or not self.y_range[0] < self.y_range[1]:
            raise ValueError("Placement ranges must be increasing with x > 0")
        return self


def _object_point_count(distance: float, density: float) -> int:
    return int(np.clip(round(density / max(distance, 1.0) ** 1.5), 10, 400))


def _clipped_noise(rng: np.random.Generator, std: float, shape: tuple[int, ...]) -> np.ndarray:
    # kept inside the render margin so every object point paints from its own box
    return np.clip(rng.normal(0.0, std, size=shape), -RENDER_MARGIN / 2, RENDER_MARGIN / 2)


def _place(
    rng: np.random.Generator, spec: SynthSceneSpec, taken: list[tuple[float, float]], calib: Calibration
) -> tuple[float, float] | None:
    for _ in range(MAX_PLACEMENT_TRIES):
        x = float(rng.uniform(*spec.x_range))
        y = float(rng.uniform(*spec.y_range))
        if any(math.hypot(x - tx, y - ty) < MIN_SEPARATION for tx, ty in taken):
            continue
        center = PointCloud(points=[[x, y, GROUND_Z + 0.9, 0.0]])
        if not project_points(center, calib).in_image[0]:
            continue
        taken.append((x, y))
        return x, y
    return None


def _pedestrian(
    rng: np.random.Generator, spec: SynthSceneSpec, x: float, y: float
) -> tuple[Box3D, np.ndarray]:
    length = float(rng.uniform(0.6, 1.0))
    width = float(rng.uniform(0.5, 0.7))
    height = float(rng.uniform(1.5, 1.9))
    theta = float(rng.uniform(-math.pi, math.pi))
    box = Box3D(x=x, y=y, z=GROUND_Z + height / 2, l=length, w=width, h=height, theta=theta)

    count = _object_point_count(math.hypot(x, y), spec.point_density)
    local = rng.uniform(-0.5, 0.5, size=(count, 3)) * np.array([length, width, height])
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    points = np.empty((count, 4))
    points[:, 0] = x + cos_t * local[:, 0] - sin_t * local[:, 1]
    points[:, 1] = y + sin_t * local[:, 0] + cos_t * local[:, 1]
    points[:, 2] = box.z + local[:, 2]
    points[:, :3] += _clipped_noise(rng, spec.noise, (count, 3))
    points[:, 3] = rng.uniform(0.2, 0.6, size=count)
    return box, points


def _pole(
    rng: np.random.Generator, spec: SynthSceneSpec, x: float, y: float
) -> tuple[Box3D, np.ndarray]:
    radius = float(rng.uniform(0.06, 0.12))
    height = float(rng.uniform(2.2, 3.2))
    box = Box3D(x=x, y=y, z=GROUND_Z + height / 2, l=2 * radius, w=2 * radius, h=height, theta=0.0)

    count = _object_point_count(math.hypot(x, y), spec.point_density)
    angle = rng.uniform(-math.pi, math.pi, size=count)
    points = np.empty((count, 4))
    points[:, 0] = x + radius * np.cos(angle)
    points[:, 1] = y + radius * np.sin(angle)
    points[:, 2] = rng.uniform(GROUND_Z, GROUND_Z + height, size=count)
    points[:, :3] += _clipped_noise(rng, spec.noise, (count, 3))
    points[:, 3] = rng.uniform(0.5, 0.9, size=count)
    return box, points


def _inflated(box: Box3D) -> Box3D:
    grow = 2 * RENDER_MARGIN
    return box.model_copy(update={"l": box.l + grow, "w": box.w + grow, "h": box.h + grow})


def _pixel_window(bbox: tuple[float, float, float, float]) -> tuple[slice, slice]:
    left, top, right, bottom = bbox
    rows = slice(int(math.floor(top)), int(math.ceil(bottom)))
    cols = slice(int(math.floor(left)), int(math.ceil(right)))
    return rows, cols


def _occlusion_level(visible_fraction: float) -> int:
    hidden = 1.0 - visible_fraction
    if hidden > 0.5:
        return 2
    if hidden > 0.1:
        return 1
    return 0


def synth_scene(spec: SynthSceneSpec) -> SceneBundle:
    """
    Generate a labelled frame.

    Args:
        spec: Scene recipe

    Returns:
        SceneBundle whose labels hold the pedestrians (difficulty metadata
        included) followed by the poles
    """
    rng = np.random.default_rng(spec.seed)
    calib = kitti_like_calibration()
    taken: list[tuple[float, float]] = []

    objects: list[tuple[str, Box3D]] = []
    chunks: list[np.ndarray] = []
    builders = ((PEDESTRIAN, spec.num_pedestrians, _pedestrian), (POLE_TYPE, spec.num_poles, _pole))
    for kind, count, build in builders:
        for _ in range(count):
            spot = _place(rng, spec, taken, calib)
            if spot is None:
                logger.warning(f"Could not place a {kind} in scene {spec.seed}")
                continue
            box, points = build(rng, spec, *spot)
            objects.append((kind, box))
            chunks.append(points)

    if spec.num_clutter:
        clutter = np.empty((spec.num_clutter, 4))
        clutter[:, 0] = rng.uniform(0.0, spec.x_range[1], size=spec.num_clutter)
        clutter[:, 1] = rng.uniform(spec.y_range[0], spec.y_range[1], size=spec.num_clutter)
        clutter[:, 2] = rng.uniform(GROUND_Z, 0.4, size=spec.num_clutter)
        clutter[:, 3] = rng.uniform(0.0, 1.0, size=spec.num_clutter)
        chunks.append(clutter)
    if spec.ground_points:
        ground = np.empty((spec.ground_points, 4))
        ground[:, 0] = rng.uniform(0.0, spec.x_range[1], size=spec.ground_points)
        ground[:, 1] = rng.uniform(spec.y_range[0], spec.y_range[1], size=spec.ground_points)
        ground[:, 2] = GROUND_Z + rng.normal(0.0, spec.noise / 2, size=spec.ground_points)
        ground[:, 3] = rng.uniform(0.0, 0.3, size=spec.ground_points)
        chunks.append(ground)

    points = np.concatenate(chunks) if chunks else np.zeros((0, 4))
    cloud = PointCloud(points=points.astype(np.float32))

    foreground = np.zeros((calib.image_height, calib.image_width, 3))
    owner = np.full((calib.image_height, calib.image_width), -1, dtype=np.int64)
    windows: dict[int, tuple[slice, slice]] = {}
    projected = {}
    by_depth = sorted(range(len(objects)), key=lambda i: -objects[i][1].x)
    for index in by_depth:
        kind, box = objects[index]
        bbox = image_bbox(_inflated(box), calib)
        projected[index] = image_bbox(box, calib)
        if bbox is None:
            continue
        rows, cols = _pixel_window(bbox.bbox)
        windows[index] = (rows, cols)
        owner[rows, cols] = index
        patch = foreground[rows, cols]
        patch[:] = 0.0
        if kind == PEDESTRIAN:
            patch[..., 0] = (rng.random(patch.shape[:2]) < spec.fidelity).astype(np.float64)

    labels: list[ObjectLabel] = []
    for index, (kind, box) in enumerate(objects):
        image_box = projected.get(index)
        if image_box is None or index not in windows:
            labels.append(ObjectLabel(object_type=kind, truncation=1.0, occlusion=3, box=box))
            continue
        rows, cols = windows[index]
        region = owner[rows, cols]
        visible = float(np.mean(region == index)) if region.size else 0.0
        labels.append(
            ObjectLabel(
                object_type=kind,
                truncation=round(image_box.truncation, 2),
                occlusion=_occlusion_level(visible),
                bbox=tuple(round(v, 2) for v in image_box.bbox),
                box=box,
            )
        )

    labels.sort(key=lambda label: label.object_type != PEDESTRIAN)
    logger.debug(
        f"Synthesised scene {spec.seed}: {len(cloud)} points, "
        f"{sum(k == PEDESTRIAN for k, _ in objects)} pedestrians, "
        f"{sum(k == POLE_TYPE for k, _ in objects)} poles"
    )
    return SceneBundle(
        frame_id=f"{spec.seed:06d}",
        cloud=cloud,
        calib=calib,
        scores=complete_background(foreground),
        labels=labels,
    )
