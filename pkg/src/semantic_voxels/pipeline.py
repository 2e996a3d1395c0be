# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""End-to-end detector: paint, encode, fuse, predict, decode."""

import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .config.models import Config
from .core.logging import get_logger, log_pipeline_stage
from .core.types import FeatureMap
from .data.kitti import ObjectLabel, detection_label
from .data.scene import SceneBundle, read_scene
from .encoders.painting import PaintedPointCloud, paint
from .encoders.pillars import crop, pillarize, pointnet_forward, scatter
from .encoders.semantic import stack_and_aggregate, voxelize_semantic
from .evaluation.postprocess import Detection, decode_detections, nms_bev
from .network.backbone import fuse
from .network.head import HeadOutput, HeadParams, head_forward
from .network.weights import NetworkWeights
from .training.anchors import generate_anchors

logger = get_logger(__name__)


class EncodedFrame(NamedTuple):
    """Geometric and semantic BEV maps of one frame (semantic is None for the baseline)."""

    geometric: FeatureMap
    semantic: FeatureMap | None


class Detector:
    """Runs the full pipeline for one fusion scheme with fixed weights."""

    def __init__(self, config: Config, weights: NetworkWeights):
        """
        Initialize the detector.

        Args:
            config: Full configuration
            weights: Network parameters; their scheme selects the fusion depth

        Raises:
            CheckpointError: If the weights do not fit the configuration
        """
        weights.check(config)
        self.config = config
        self.weights = weights
        self.scheme = weights.scheme
        self.pointnet = weights.pointnet_params(config)
        self.semantic = weights.semantic_params() if self.scheme != "none" else None
        self.head = HeadParams.from_weights(weights)
        self.anchors = generate_anchors(config.grid, config.anchors)

    def _timed(self, stage: str, frame_id: str, func, *args):
        start = time.perf_counter()
        try:
            result = func(*args)
        except Exception as e:
            elapsed = time.perf_counter() - start
            log_pipeline_stage(stage, frame_id, False, details=str(e), elapsed=elapsed)
            raise
        log_pipeline_stage(stage, frame_id, True, elapsed=time.perf_counter() - start)
        return result

    def paint(self, scene: SceneBundle) -> PaintedPointCloud:
        return self._timed("paint", scene.frame_id, paint, scene.cloud, scene.scores, scene.calib)

    def encode(self, painted: PaintedPointCloud) -> EncodedFrame:
        """Geometric pillar features and, unless running the baseline, semantic features."""
        grid = self.config.grid
        cropped = crop(painted, grid)
        pillars = pillarize(cropped, grid)
        geometric = scatter(pointnet_forward(pillars, self.pointnet), pillars.active_coords(), grid)
        semantic = None
        if self.semantic is not None:
            semantic = stack_and_aggregate(voxelize_semantic(cropped, grid), self.semantic, grid)
        return EncodedFrame(geometric, semantic)

    def head_input(self, encoded: EncodedFrame) -> FeatureMap:
        return fuse(
            encoded.geometric, encoded.semantic, self.scheme, self.config.backbone, self.weights
        )

    def predict(self, features: FeatureMap, head: HeadParams | None = None) -> HeadOutput:
        return head_forward(features, head or self.head)

    def decode(self, output: HeadOutput) -> list[Detection]:
        """Threshold, decode and suppress."""
        eval_cfg = self.config.eval
        candidates = decode_detections(output, self.anchors, eval_cfg.score_threshold)
        return nms_bev(candidates, eval_cfg.nms_iou_threshold)

    def features(self, scene: SceneBundle) -> FeatureMap:
        """Head input of a scene (paint, encode, fuse)."""
        painted = self.paint(scene)
        encoded = self._timed("encode", scene.frame_id, self.encode, painted)
        return self._timed("fuse", scene.frame_id, self.head_input, encoded)

    def detect(self, scene: SceneBundle) -> list[Detection]:
        """
        Run the full pipeline on one scene.

        Returns:
            Detections after NMS, by descending score
        """
        features = self.features(scene)
        output = self._timed("forward", scene.frame_id, self.predict, features)
        detections = self._timed("decode", scene.frame_id, self.decode, output)
        logger.info(f"Frame {scene.frame_id}: {len(detections)} detections ({self.scheme})")
        return detections

    def detect_batch(
        self, scenes: Sequence[SceneBundle | Path], threads: int = 1
    ) -> list[list[Detection]]:
        """Detect on many scenes, in input order; paths are loaded lazily."""

        def run(item):
            scene = read_scene(item) if isinstance(item, (str, Path)) else item
            return self.detect(scene)

        if threads <= 1 or len(scenes) <= 1:
            return [run(item) for item in scenes]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, scenes))


def detection_lines(detections: Sequence[Detection], scene: SceneBundle) -> list[ObjectLabel]:
    """KITTI output entries of a scene's detections."""
    return [detection_label(d.box, d.score, scene.calib) for d in detections]


def zero_semantic(encoded: EncodedFrame) -> EncodedFrame:
    """Copy of a frame whose semantic map carries no information."""
    if encoded.semantic is None:
        return encoded
    return EncodedFrame(encoded.geometric, FeatureMap(values=np.zeros_like(encoded.semantic.values)))
