# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Anchor-relative box codec and IoU-based anchor labelling."""

import math
from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..config.models import LossConfig
from ..core.geometry import iou_bev_matrix
from ..core.logging import get_logger
from ..core.types import TWO_PI, Box3D, boxes_to_array

logger = get_logger(__name__)

POSITIVE = 1
NEGATIVE = 0
IGNORED = -1

# bound on |size delta| at decode time; exp(d) * anchor stays positive and finite
MAX_LOG_SCALE = math.log(1000.0)


class BoxDelta(BaseModel):
    """Anchor-relative box offsets.

    Positions are scaled by the anchor's BEV diagonal (z by its height),
    sizes are log ratios and the heading is a plain difference.
    """

    model_config = ConfigDict(frozen=True)

    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0
    dl: float = 0.0
    dw: float = 0.0
    dh: float = 0.0
    dtheta: float = 0.0

    @classmethod
    def from_array(cls, values) -> "BoxDelta":
        dx, dy, dz, dl, dw, dh, dtheta = (float(v) for v in values)
        return cls(dx=dx, dy=dy, dz=dz, dl=dl, dw=dw, dh=dh, dtheta=dtheta)

    def to_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz, self.dl, self.dw, self.dh, self.dtheta])


def encode_boxes(gts: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Vectorised encode over (M, 7) box and anchor arrays."""
    gts = np.asarray(gts, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.float64)
    diagonal = np.hypot(anchors[..., 3], anchors[..., 4])
    return np.stack(
        [
            (gts[..., 0] - anchors[..., 0]) / diagonal,
            (gts[..., 1] - anchors[..., 1]) / diagonal,
            (gts[..., 2] - anchors[..., 2]) / anchors[..., 5],
            np.log(gts[..., 3] / anchors[..., 3]),
            np.log(gts[..., 4] / anchors[..., 4]),
            np.log(gts[..., 5] / anchors[..., 5]),
            gts[..., 6] - anchors[..., 6],
        ],
        axis=-1,
    )


def decode_boxes(deltas: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Vectorised inverse of encode_boxes; headings are not wrapped.

    Size deltas are clamped to +-MAX_LOG_SCALE before exponentiation.
    """
    deltas = np.asarray(deltas, dtype=np.float64)
    sizes = np.exp(np.clip(deltas[..., 3:6], -MAX_LOG_SCALE, MAX_LOG_SCALE))
    anchors = np.asarray(anchors, dtype=np.float64)
    diagonal = np.hypot(anchors[..., 3], anchors[..., 4])
    return np.stack(
        [
            deltas[..., 0] * diagonal + anchors[..., 0],
            deltas[..., 1] * diagonal + anchors[..., 1],
            deltas[..., 2] * anchors[..., 5] + anchors[..., 2],
            sizes[..., 0] * anchors[..., 3],
            sizes[..., 1] * anchors[..., 4],
            sizes[..., 2] * anchors[..., 5],
            deltas[..., 6] + anchors[..., 6],
        ],
        axis=-1,
    )


def encode_box(gt: Box3D, anchor: Box3D) -> BoxDelta:
    """Offsets of a ground-truth box from an anchor."""
    return BoxDelta.from_array(encode_boxes(gt.to_array(), anchor.to_array()))


def decode_box(delta: BoxDelta, anchor: Box3D) -> Box3D:
    """Box recovered from an anchor and its offsets."""
    return Box3D.from_array(decode_boxes(delta.to_array(), anchor.to_array()))


def direction_bits(gt_theta: np.ndarray, anchor_theta: np.ndarray) -> np.ndarray:
    """1 where the anchor-relative heading lies in [0, pi) modulo 2 pi."""
    relative = np.mod(np.asarray(gt_theta) - np.asarray(anchor_theta), TWO_PI)
    return (relative < math.pi).astype(np.int64)


class TargetAssignment(BaseModel):
    """Per-anchor training targets in anchor flat-index order.

    ``labels`` is 1 (positive), 0 (negative) or -1 (ignored). ``matched_gt``,
    ``box_targets`` and ``dir_targets`` are meaningful for positives only.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    labels: np.ndarray
    matched_gt: np.ndarray
    box_targets: np.ndarray
    dir_targets: np.ndarray
    num_gts: int = Field(default=0)

    @property
    def num_positive(self) -> int:
        return int(np.count_nonzero(self.labels == POSITIVE))

    @property
    def num_negative(self) -> int:
        return int(np.count_nonzero(self.labels == NEGATIVE))

    def positive_indices(self) -> np.ndarray:
        return np.nonzero(self.labels == POSITIVE)[0]


def assign_targets(
    anchors: np.ndarray, gts: Sequence[Box3D] | np.ndarray, cfg: LossConfig | None = None
) -> TargetAssignment:
    """
    Label anchors by BEV IoU against the ground truth.

    An anchor is positive when its best IoU reaches ``match_iou_pos`` (matched
    to that gt), negative below ``match_iou_neg`` and ignored in between.
    Every gt additionally claims its best anchor as a positive when that IoU is
    above zero; ties go to the lowest flat index, and a gt whose best anchor
    was already claimed by an earlier gt takes its best unclaimed anchor.

    Args:
        anchors: Anchor grid (..., 7), flattened in C order
        gts: Ground-truth boxes
        cfg: Matching thresholds

    Returns:
        TargetAssignment over all anchors
    """
    cfg = cfg or LossConfig()
    flat = np.asarray(anchors, dtype=np.float64).reshape(-1, 7)
    gt_array = gts if isinstance(gts, np.ndarray) else boxes_to_array(gts)
    gt_array = np.asarray(gt_array, dtype=np.float64).reshape(-1, 7)
    count = flat.shape[0]

    labels = np.full(count, NEGATIVE, dtype=np.int64)
    matched = np.full(count, -1, dtype=np.int64)
    box_targets = np.zeros((count, 7))
    dir_targets = np.zeros(count, dtype=np.int64)

    if gt_array.shape[0] == 0 or count == 0:
        return TargetAssignment(
            labels=labels, matched_gt=matched, box_targets=box_targets, dir_targets=dir_targets
        )

    iou = iou_bev_matrix(flat, gt_array)
    best_iou = iou.max(axis=1)
    best_gt = iou.argmax(axis=1)

    labels[best_iou >= cfg.match_iou_neg] = IGNORED
    positive = best_iou >= cfg.match_iou_pos
    labels[positive] = POSITIVE
    matched[positive] = best_gt[positive]

    forced: list[int] = []
    for g in range(gt_array.shape[0]):
        column = iou[:, g].copy()
        column[forced] = -1.0
        anchor = int(np.argmax(column))
        if column[anchor] <= 0.0:
            continue
        forced.append(anchor)
        labels[anchor] = POSITIVE
        matched[anchor] = g

    pos = np.nonzero(labels == POSITIVE)[0]
    box_targets[pos] = encode_boxes(gt_array[matched[pos]], flat[pos])
    dir_targets[pos] = direction_bits(gt_array[matched[pos], 6], flat[pos, 6])

    logger.debug(
        f"Assigned {pos.size} positive anchors ({len(forced)} forced) to {gt_array.shape[0]} boxes"
    )
    return TargetAssignment(
        labels=labels,
        matched_gt=matched,
        box_targets=box_targets,
        dir_targets=dir_targets,
        num_gts=int(gt_array.shape[0]),
    )
