# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Scene bundles: one frame's scan, calibration, score map and labels in a directory.

Layout::

    <scene>/frame.json     frame id and image size
    <scene>/velodyne.bin   KITTI scan
    <scene>/calib.txt      KITTI calibration (P2, R0_rect, Tr_velo_to_cam)
    <scene>/scores.svsm    segmentation score map
    <scene>/label.txt      KITTI labels (optional)
"""

from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.errors import DimensionMismatch
from ..core.logging import get_logger
from ..core.types import Calibration, PointCloud
from ..encoders.painting import SegScoreMap
from .formats import atomic_write_text, read_scoremap, write_scoremap
from .kitti import (
    ObjectLabel,
    read_calib,
    read_labels,
    read_velodyne,
    write_calib,
    write_labels,
    write_velodyne,
)

logger = get_logger(__name__)

FRAME_FILE = "frame.json"
VELODYNE_FILE = "velodyne.bin"
CALIB_FILE = "calib.txt"
SCORES_FILE = "scores.svsm"
LABEL_FILE = "label.txt"


class FrameInfo(BaseModel):
    """Contents of frame.json."""

    frame_id: str = Field(description="Frame identifier shared by all parts")
    image_width: int
    image_height: int


class SceneBundle(BaseModel):
    """All inputs of one frame, plus its labels when known."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    frame_id: str
    cloud: PointCloud
    calib: Calibration
    scores: SegScoreMap
    labels: list[ObjectLabel] | None = None

    @model_validator(mode="after")
    def validate_image_size(self):
        """Score map and calibration describe the same image."""
        if (self.scores.width, self.scores.height) != (self.calib.image_width, self.calib.image_height):
            raise DimensionMismatch(
                f"Frame {self.frame_id}: score map {self.scores.width}x{self.scores.height} vs "
                f"calibration {self.calib.image_width}x{self.calib.image_height}"
            )
        return self

    def pedestrians(self) -> list[ObjectLabel]:
        return [label for label in self.labels or [] if label.in_scope]


def write_scene(bundle: SceneBundle, directory: str | Path) -> Path:
    """Write a bundle directory; returns its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    info = FrameInfo(
        frame_id=bundle.frame_id,
        image_width=bundle.calib.image_width,
        image_height=bundle.calib.image_height,
    )
    atomic_write_text(directory / FRAME_FILE, info.model_dump_json(indent=2) + "\n")
    write_velodyne(bundle.cloud, directory / VELODYNE_FILE)
    write_calib(bundle.calib, directory / CALIB_FILE)
    write_scoremap(bundle.scores, directory / SCORES_FILE)
    if bundle.labels is not None:
        write_labels(bundle.labels, directory / LABEL_FILE, bundle.calib)
    logger.info(f"Wrote scene {bundle.frame_id} to {directory}")
    return directory


def read_scene(directory: str | Path) -> SceneBundle:
    """
    Load a bundle directory.

    Raises:
        FileNotFoundError: If a required part is missing
        ParseError, TruncatedFile, BadMagic: On malformed parts
    """
    directory = Path(directory)
    info = FrameInfo.model_validate_json((directory / FRAME_FILE).read_text())
    calib = read_calib(directory / CALIB_FILE, info.image_width, info.image_height)
    label_path = directory / LABEL_FILE
    return SceneBundle(
        frame_id=info.frame_id,
        cloud=read_velodyne(directory / VELODYNE_FILE),
        calib=calib,
        scores=read_scoremap(directory / SCORES_FILE),
        labels=read_labels(label_path, calib) if label_path.exists() else None,
    )


def list_scenes(root: str | Path) -> list[Path]:
    """Scene directories under ``root`` in name order; ``root`` itself if it is one."""
    root = Path(root)
    if (root / FRAME_FILE).exists():
        return [root]
    if not root.is_dir():
        raise FileNotFoundError(f"No scene directory at {root}")
    return sorted(p for p in root.iterdir() if (p / FRAME_FILE).exists())
