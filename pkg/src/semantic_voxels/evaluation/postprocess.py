# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Turn head outputs into scored boxes and suppress duplicates."""

import math
from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.special import expit

from ..core.geometry import iou_bev_matrix
from ..core.logging import get_logger
from ..core.types import Box3D, normalize_angles
from ..network.head import HeadOutput
from ..training.targets import decode_boxes, direction_bits

logger = get_logger(__name__)


class Detection(BaseModel):
    """A scored pedestrian box in the LiDAR frame."""

    model_config = ConfigDict(frozen=True)

    box: Box3D
    score: float

    @field_validator("score")
    @classmethod
    def validate_score(cls, v):
        """Validate a probability."""
        if not 0.0 <= v <= 1.0:
            raise ValueError("Detection score must lie in [0, 1]")
        return v


def detections_to_arrays(dets: Sequence[Detection]) -> tuple[np.ndarray, np.ndarray]:
    """(D, 7) boxes and (D,) scores."""
    if not dets:
        return np.zeros((0, 7)), np.zeros(0)
    return np.stack([d.box.to_array() for d in dets]), np.array([d.score for d in dets])


def decode_detections(
    head: HeadOutput, anchors: np.ndarray, score_threshold: float = 0.05
) -> list[Detection]:
    """
    Decode every anchor whose logistic score reaches the threshold.

    The heading is flipped by pi when the direction classifier's argmax
    disagrees with the half-turn the decoded heading falls into relative to
    its anchor. Candidates whose box does not decode to finite values are
    dropped.

    Args:
        head: Raw head outputs
        anchors: Anchor grid matching the head layout
        score_threshold: Minimum foreground probability

    Returns:
        Detections in anchor flat-index order
    """
    cls_logits, box_deltas, dir_logits = head.flat()
    flat_anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 7)
    scores = expit(cls_logits.astype(np.float64))
    keep = np.nonzero(scores >= score_threshold)[0]
    if keep.size == 0:
        return []

    boxes = decode_boxes(box_deltas[keep], flat_anchors[keep])
    predicted_bit = np.argmax(dir_logits[keep], axis=1)
    decoded_bit = direction_bits(boxes[:, 6], flat_anchors[keep, 6])
    flip = predicted_bit != decoded_bit
    boxes[:, 6] = normalize_angles(boxes[:, 6] + np.where(flip, math.pi, 0.0))

    finite = np.all(np.isfinite(boxes), axis=1)
    if not finite.all():
        logger.warning(f"Dropped {int((~finite).sum())} candidates with non-finite boxes")
        boxes, keep = boxes[finite], keep[finite]

    return [
        Detection(box=Box3D.from_array(box), score=float(score))
        for box, score in zip(boxes, scores[keep])
    ]


def nms_bev(dets: Sequence[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    """
    Greedy rotated-BEV non-maximum suppression.

    Detections are visited by descending score (ties in input order); a
    detection is dropped when its BEV IoU with an already kept one exceeds
    the threshold.

    Returns:
        Surviving detections by descending score
    """
    if len(dets) <= 1:
        return list(dets)
    boxes, scores = detections_to_arrays(dets)
    order = np.argsort(-scores, kind="stable")
    overlaps = iou_bev_matrix(boxes, boxes)

    keep: list[int] = []
    suppressed = np.zeros(len(dets), dtype=bool)
    for i in order:
        if suppressed[i]:
            continue
        keep.append(int(i))
        suppressed |= overlaps[i] > iou_threshold

    logger.debug(f"NMS kept {len(keep)}/{len(dets)} detections")
    return [dets[i] for i in keep]
