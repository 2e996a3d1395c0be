# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""KITTI velodyne scans, calibration files and object labels.

Labels live in the rectified camera frame with the location at the bottom
center of the box; inside the library boxes live in the LiDAR frame with z at
the geometric center. Heading conventions: a camera rotation_y of ry points
the box's length axis along (cos ry, 0, -sin ry) in camera coordinates, and
that vector mapped into the LiDAR frame gives theta = atan2(dy, dx).
"""

import math
from collections.abc import Sequence
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..core.errors import ParseError, TruncatedFile
from ..core.geometry import image_bbox
from ..core.logging import get_logger
from ..core.types import Box3D, Calibration, PointCloud, normalize_angle
from .formats import FLOAT_LE, atomic_write_bytes, atomic_write_text

logger = get_logger(__name__)

KITTI_IMAGE_WIDTH = 1242
KITTI_IMAGE_HEIGHT = 375
PEDESTRIAN = "Pedestrian"
CALIB_KEYS = {"P2": 12, "R0_rect": 9, "Tr_velo_to_cam": 12}


class ObjectLabel(BaseModel):
    """One object of a KITTI label file, with its box in the LiDAR frame.

    ``box`` is None for entries without 3D extent (DontCare regions).
    """

    model_config = ConfigDict(frozen=True)

    object_type: str = PEDESTRIAN
    truncation: float = 0.0
    occlusion: int = 0
    alpha: float = -10.0
    bbox: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    box: Box3D | None = None
    score: float | None = Field(default=None, description="Detection confidence, if any")

    @property
    def bbox_height(self) -> float:
        return self.bbox[3] - self.bbox[1]

    @property
    def in_scope(self) -> bool:
        """Only pedestrians are detected; other classes are parsed and carried along."""
        return self.object_type == PEDESTRIAN and self.box is not None


def read_velodyne(path: str | Path) -> PointCloud:
    """
    Read a KITTI scan of little-endian float32 (x, y, z, r) quadruples.

    Raises:
        TruncatedFile: If the byte length is not a multiple of 16
        ParseError: If the scan holds non-finite values
    """
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        raise TruncatedFile(f"{path}: {len(raw)} bytes is not a whole number of points")
    points = np.frombuffer(raw, dtype=FLOAT_LE).reshape(-1, 4).astype(np.float32)
    if not np.all(np.isfinite(points)):
        raise ParseError("scan contains non-finite values", path=str(path))
    logger.debug(f"Read {points.shape[0]} points from {path}")
    return PointCloud(points=points)


def write_velodyne(cloud: PointCloud, path: str | Path) -> None:
    atomic_write_bytes(path, cloud.points.astype(FLOAT_LE).tobytes())


def _format_floats(values: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).ravel())


def read_calib(
    path: str | Path,
    image_width: int = KITTI_IMAGE_WIDTH,
    image_height: int = KITTI_IMAGE_HEIGHT,
) -> Calibration:
    """
    Parse the P2, R0_rect and Tr_velo_to_cam entries of a KITTI calibration file.

    Other keys are ignored.

    Raises:
        ParseError: With the offending line number on malformed entries or missing keys
    """
    found: dict[str, np.ndarray] = {}
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise ParseError(f"expected 'KEY: values', got {line!r}", number, str(path))
        key = key.strip()
        if key not in CALIB_KEYS:
            continue
        try:
            values = np.array([float(tok) for tok in rest.split()])
        except ValueError as e:
            raise ParseError(f"non-numeric value in {key}: {e}", number, str(path)) from e
        if values.size != CALIB_KEYS[key] or not np.all(np.isfinite(values)):
            raise ParseError(
                f"{key} needs {CALIB_KEYS[key]} finite values, got {values.size}", number, str(path)
            )
        found[key] = values

    missing = sorted(set(CALIB_KEYS) - set(found))
    if missing:
        raise ParseError(f"missing calibration keys {missing}", path=str(path))

    rectification = np.eye(4)
    rectification[:3, :3] = found["R0_rect"].reshape(3, 3)
    velo_to_cam = np.eye(4)
    velo_to_cam[:3, :] = found["Tr_velo_to_cam"].reshape(3, 4)
    return Calibration(
        velo_to_cam=velo_to_cam,
        cam_to_image=found["P2"].reshape(3, 4),
        rectification=rectification,
        image_width=image_width,
        image_height=image_height,
    )


def write_calib(calib: Calibration, path: str | Path) -> None:
    """Write a KITTI-style calibration file with exact float round-tripping."""
    lines = [
        f"P2: {_format_floats(calib.cam_to_image)}",
        f"R0_rect: {_format_floats(calib.rectification[:3, :3])}",
        f"Tr_velo_to_cam: {_format_floats(calib.velo_to_cam[:3, :])}",
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")


def camera_to_lidar_box(
    dims_hwl: Sequence[float], location: Sequence[float], rotation_y: float, calib: Calibration
) -> Box3D:
    """Box3D in the LiDAR frame from KITTI camera-frame (h, w, l), bottom-center location and ry."""
    h, w, l = (float(v) for v in dims_hwl)  # noqa: E741
    x, y, z = (float(v) for v in location)
    rect_to_velo = calib.rect_to_velo()
    center = rect_to_velo @ np.array([x, y - h / 2, z, 1.0])
    heading = rect_to_velo[:3, :3] @ np.array([math.cos(rotation_y), 0.0, -math.sin(rotation_y)])
    theta = math.atan2(heading[1], heading[0])
    return Box3D(x=center[0], y=center[1], z=center[2], l=l, w=w, h=h, theta=theta)


def lidar_to_camera_box(
    box: Box3D, calib: Calibration
) -> tuple[tuple[float, float, float], tuple[float, float, float], float]:
    """Inverse of camera_to_lidar_box: ((h, w, l), bottom-center location, rotation_y)."""
    velo_to_rect = calib.velo_to_rect()
    center = velo_to_rect @ np.array([box.x, box.y, box.z, 1.0])
    heading = velo_to_rect[:3, :3] @ np.array([math.cos(box.theta), math.sin(box.theta), 0.0])
    rotation_y = normalize_angle(math.atan2(-heading[2], heading[0]))
    location = (float(center[0]), float(center[1] + box.h / 2), float(center[2]))
    return (box.h, box.w, box.l), location, rotation_y


def _parse_label_line(line: str, number: int, path: str, calib: Calibration) -> ObjectLabel:
    fields = line.split()
    if len(fields) not in (15, 16):
        raise ParseError(f"expected 15 or 16 fields, got {len(fields)}", number, path)
    try:
        values = [float(tok) for tok in fields[1:]]
    except ValueError as e:
        raise ParseError(f"non-numeric label field: {e}", number, path) from e
    if not all(math.isfinite(v) for v in values):
        raise ParseError("label holds non-finite values", number, path)

    truncation, occlusion, alpha = values[0], int(values[1]), values[2]
    bbox = (values[3], values[4], values[5], values[6])
    dims, location, rotation_y = values[7:10], values[10:13], values[13]
    score = values[14] if len(values) == 15 else None

    box = None
    if all(d > 0 for d in dims):
        box = camera_to_lidar_box(dims, location, rotation_y, calib)
    return ObjectLabel(
        object_type=fields[0],
        truncation=truncation,
        occlusion=occlusion,
        alpha=alpha,
        bbox=bbox,
        box=box,
        score=score,
    )


def read_labels(path: str | Path, calib: Calibration) -> list[ObjectLabel]:
    """
    Parse a KITTI label (or detection) file into LiDAR-frame objects.

    Raises:
        ParseError: With the line number of the first malformed line
    """
    labels = []
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if line.strip():
            labels.append(_parse_label_line(line, number, str(path), calib))
    logger.debug(f"Read {len(labels)} labels from {path}")
    return labels


def format_label(label: ObjectLabel, calib: Calibration) -> str:
    """One KITTI label line; the score is appended when present."""
    if label.box is None:
        dims, location, rotation_y = (-1.0, -1.0, -1.0), (-1000.0, -1000.0, -1000.0), -10.0
    else:
        dims, location, rotation_y = lidar_to_camera_box(label.box, calib)
    fields = [
        label.object_type,
        f"{label.truncation:.2f}",
        str(label.occlusion),
        f"{label.alpha:.6f}",
        *(f"{v:.2f}" for v in label.bbox),
        *(f"{v:.6f}" for v in dims),
        *(f"{v:.6f}" for v in location),
        f"{rotation_y:.6f}",
    ]
    if label.score is not None:
        fields.append(f"{label.score:.6f}")
    return " ".join(fields)


def write_labels(labels: Sequence[ObjectLabel], path: str | Path, calib: Calibration) -> None:
    """Write objects in KITTI label format."""
    text = "".join(format_label(label, calib) + "\n" for label in labels)
    atomic_write_text(path, text)


def detection_label(box: Box3D, score: float, calib: Calibration) -> ObjectLabel:
    """KITTI output entry of a detection, with the projected 2D box and observation angle."""
    projected = image_bbox(box, calib)
    bbox = projected.bbox if projected else (0.0, 0.0, 0.0, 0.0)
    _, location, rotation_y = lidar_to_camera_box(box, calib)
    alpha = normalize_angle(rotation_y - math.atan2(location[0], location[2]))
    return ObjectLabel(object_type=PEDESTRIAN, alpha=alpha, bbox=bbox, box=box, score=score)
