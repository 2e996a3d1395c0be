# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""KITTI-style pedestrian average precision over easy, moderate and hard pools."""

from collections.abc import Callable, Sequence
from enum import Enum

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from ..config.models import EvalConfig
from ..core.geometry import iou_3d_matrix, iou_bev_matrix
from ..core.logging import get_logger
from ..core.types import Box3D, boxes_to_array
from ..data.kitti import ObjectLabel
from .postprocess import Detection, detections_to_arrays

logger = get_logger(__name__)

IoUFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class DifficultyLabel(str, Enum):
    """Evaluation pool of a ground-truth object; pools nest easy in moderate in hard."""

    EASY = "easy"
    MODERATE = "moderate"
    HARD = "hard"
    NONE = "none"

    @property
    def rank(self) -> int:
        return _RANK[self]


_RANK = {
    DifficultyLabel.EASY: 0,
    DifficultyLabel.MODERATE: 1,
    DifficultyLabel.HARD: 2,
    DifficultyLabel.NONE: 3,
}

EVAL_LEVELS = (DifficultyLabel.EASY, DifficultyLabel.MODERATE, DifficultyLabel.HARD)

# (min 2D box height px, max occlusion, max truncation)
DIFFICULTY_THRESHOLDS = {
    DifficultyLabel.EASY: (40.0, 0, 0.15),
    DifficultyLabel.MODERATE: (25.0, 1, 0.30),
    DifficultyLabel.HARD: (25.0, 2, 0.50),
}

PEDESTRIAN = "Pedestrian"
DONT_CARE_TYPES = {"Person_sitting"}
METRICS: dict[str, IoUFn] = {"3d": iou_3d_matrix, "bev": iou_bev_matrix}


def classify_difficulty(height: float, occlusion: int, truncation: float) -> DifficultyLabel:
    """Easiest pool whose height, occlusion and truncation limits the object meets."""
    for level in EVAL_LEVELS:
        min_height, max_occlusion, max_truncation = DIFFICULTY_THRESHOLDS[level]
        if height >= min_height and occlusion <= max_occlusion and truncation <= max_truncation:
            return level
    return DifficultyLabel.NONE


def recall_points(num_points: int) -> np.ndarray:
    """Interpolation recalls: 0, 0.1, ..., 1 for 11 points; 1/40, ..., 1 for 40."""
    if num_points == 11:
        return np.arange(11) / 10
    if num_points == 40:
        return np.arange(1, 41) / 40
    raise ValueError(f"Unsupported number of recall points: {num_points}")


class APResult(BaseModel):
    """Precision-recall curve and AP of one metric at one difficulty."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    ap: float = Field(description="Average precision in percent")
    num_gt: int
    num_tp: int
    num_fp: int
    precision: np.ndarray
    recall: np.ndarray

    @property
    def num_fn(self) -> int:
        return self.num_gt - self.num_tp


def _as_box_array(boxes) -> np.ndarray:
    if isinstance(boxes, np.ndarray):
        return np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    items = list(boxes)
    if items and isinstance(items[0], Box3D):
        return boxes_to_array(items)
    return np.asarray(items, dtype=np.float64).reshape(-1, 7)


def _as_detection_arrays(dets) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(dets, tuple):
        boxes, scores = dets
        return _as_box_array(boxes), np.asarray(scores, dtype=np.float64).reshape(-1)
    return detections_to_arrays(list(dets))


def average_precision(
    detections: Sequence,
    ground_truth: Sequence,
    iou_fn: IoUFn = iou_bev_matrix,
    iou_threshold: float = 0.5,
    num_points: int = 40,
    dont_care: Sequence[np.ndarray] | None = None,
) -> APResult:
    """
    Interpolated average precision over a set of frames.

    Detections from all frames are visited by descending score (ties by frame,
    then by detection index). Each one matches the unmatched valid gt of its
    frame with the highest IoU at or above the threshold and counts as a true
    positive; failing that it absorbs an unmatched don't-care gt and is
    ignored; otherwise it is a false positive. Precision at each recall point
    is the maximum precision at any recall at or above it.

    Args:
        detections: Per frame, a list of Detection or a (boxes, scores) tuple
        ground_truth: Per frame, (G, 7) boxes or a list of Box3D
        iou_fn: Pairwise overlap function (BEV or 3D)
        iou_threshold: Minimum IoU for a match
        num_points: 11 or 40 recall points
        dont_care: Per frame, (G,) mask of gts that are neither rewarded nor penalised

    Returns:
        APResult; AP is 0 when there is no valid gt
    """
    if len(detections) != len(ground_truth):
        raise ValueError(f"{len(detections)} detection frames but {len(ground_truth)} gt frames")
    recalls_at = recall_points(num_points)

    frame_gts = [_as_box_array(g) for g in ground_truth]
    frame_dc = [
        np.zeros(g.shape[0], dtype=bool) if dont_care is None else np.asarray(dont_care[f], dtype=bool)
        for f, g in enumerate(frame_gts)
    ]
    num_gt = int(sum(int((~dc).sum()) for dc in frame_dc))

    frame_dets = [_as_detection_arrays(d) for d in detections]
    overlaps = [iou_fn(boxes, gts) for (boxes, _), gts in zip(frame_dets, frame_gts)]

    scores = np.concatenate([s for _, s in frame_dets]) if frame_dets else np.zeros(0)
    if frame_dets:
        frames = np.concatenate([np.full(s.size, f) for f, (_, s) in enumerate(frame_dets)])
        indices = np.concatenate([np.arange(s.size) for _, s in frame_dets])
    else:
        frames = indices = np.zeros(0, int)
    order = np.lexsort((indices, frames, -scores))

    matched = [np.zeros(g.shape[0], dtype=bool) for g in frame_gts]
    outcomes: list[bool] = []
    for k in order:
        f, d = int(frames[k]), int(indices[k])
        if frame_gts[f].shape[0] == 0:
            outcomes.append(False)
            continue
        row = overlaps[f][d]
        eligible = ~matched[f] & (row >= iou_threshold)

        valid = eligible & ~frame_dc[f]
        if valid.any():
            g = int(np.argmax(np.where(valid, row, -1.0)))
            matched[f][g] = True
            outcomes.append(True)
            continue
        ignorable = eligible & frame_dc[f]
        if ignorable.any():
            g = int(np.argmax(np.where(ignorable, row, -1.0)))
            matched[f][g] = True
            continue
        outcomes.append(False)

    tp_flags = np.asarray(outcomes, dtype=bool)
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    num_tp = int(tp[-1]) if tp.size else 0
    num_fp = int(fp[-1]) if fp.size else 0

    if num_gt == 0 or tp.size == 0:
        return APResult(
            ap=0.0,
            num_gt=num_gt,
            num_tp=num_tp,
            num_fp=num_fp,
            precision=np.zeros(0),
            recall=np.zeros(0),
        )

    recall = tp / num_gt
    precision = tp / (tp + fp)
    interpolated = [
        float(precision[recall >= r].max()) if np.any(recall >= r) else 0.0 for r in recalls_at
    ]
    return APResult(
        ap=100.0 * float(np.mean(interpolated)),
        num_gt=num_gt,
        num_tp=num_tp,
        num_fp=num_fp,
        precision=precision,
        recall=recall,
    )


def _frame_pools(
    labels: Sequence[ObjectLabel], level: DifficultyLabel
) -> tuple[np.ndarray, np.ndarray]:
    """Boxes and don't-care mask of one frame for one difficulty pool."""
    boxes, dont_care = [], []
    for label in labels:
        if label.box is None:
            continue
        if label.object_type == PEDESTRIAN:
            difficulty = classify_difficulty(label.bbox_height, label.occlusion, label.truncation)
            boxes.append(label.box.to_array())
            dont_care.append(difficulty.rank > level.rank)
        elif label.object_type in DONT_CARE_TYPES:
            boxes.append(label.box.to_array())
            dont_care.append(True)
    if not boxes:
        return np.zeros((0, 7)), np.zeros(0, dtype=bool)
    return np.stack(boxes), np.asarray(dont_care, dtype=bool)


class EvalReport(BaseModel):
    """AP_3D and AP_BEV per difficulty with their mean over the three pools."""

    num_frames: int
    num_points: int
    iou_threshold: float
    results: dict[str, dict[str, APResult]] = Field(
        description="metric ('3d' or 'bev') -> difficulty -> result"
    )

    def ap(self, metric: str, level: str) -> float:
        return self.results[metric][level].ap

    def mean_ap(self, metric: str) -> float:
        """Arithmetic mean of the three difficulty APs."""
        return float(np.mean([self.results[metric][level.value].ap for level in EVAL_LEVELS]))

    def to_dataframe(self) -> pd.DataFrame:
        """One row per (metric, difficulty)."""
        rows = []
        for metric, per_level in self.results.items():
            for level, result in per_level.items():
                rows.append(
                    {
                        "metric": f"AP_{metric.upper()}",
                        "difficulty": level,
                        "ap": round(result.ap, 4),
                        "gt": result.num_gt,
                        "tp": result.num_tp,
                        "fp": result.num_fp,
                        "fn": result.num_fn,
                    }
                )
        return pd.DataFrame(rows, columns=["metric", "difficulty", "ap", "gt", "tp", "fp", "fn"])

    def to_table(self) -> str:
        """Human-readable AP table with mAP columns."""
        frame = self.to_dataframe()
        table = frame.pivot(index="metric", columns="difficulty", values="ap")
        table = table.reindex(columns=[level.value for level in EVAL_LEVELS])
        table["mAP"] = [round(self.mean_ap(m.removeprefix("AP_").lower()), 4) for m in table.index]
        header = (
            f"Pedestrian AP ({self.num_points}-point, IoU {self.iou_threshold}) "
            f"over {self.num_frames} frames"
        )
        return f"{header}\n{table.to_string()}\n\n{frame.to_string(index=False)}\n"

    def to_key_values(self) -> str:
        """Machine-readable ``key=value`` lines, one per figure."""
        lines = [
            f"num_frames={self.num_frames}",
            f"num_points={self.num_points}",
            f"iou_threshold={self.iou_threshold}",
        ]
        for metric, per_level in self.results.items():
            for level, result in per_level.items():
                prefix = f"ap_{metric}_{level}"
                lines.append(f"{prefix}={result.ap:.6f}")
                lines.append(f"{prefix}_tp={result.num_tp}")
                lines.append(f"{prefix}_fp={result.num_fp}")
                lines.append(f"{prefix}_fn={result.num_fn}")
            lines.append(f"map_{metric}={self.mean_ap(metric):.6f}")
        return "\n".join(lines) + "\n"


def evaluate(
    detections: Sequence[Sequence[Detection]],
    ground_truth: Sequence[Sequence[ObjectLabel]],
    cfg: EvalConfig | None = None,
) -> EvalReport:
    """
    Score detections against labelled frames for both metrics and all pools.

    Args:
        detections: Per-frame detections
        ground_truth: Per-frame labels carrying 2D difficulty metadata
        cfg: IoU threshold and recall-point mode

    Returns:
        EvalReport
    """
    cfg = cfg or EvalConfig()
    results: dict[str, dict[str, APResult]] = {}
    for metric, iou_fn in METRICS.items():
        results[metric] = {}
        for level in EVAL_LEVELS:
            pools = [_frame_pools(labels, level) for labels in ground_truth]
            results[metric][level.value] = average_precision(
                detections,
                [boxes for boxes, _ in pools],
                iou_fn=iou_fn,
                iou_threshold=cfg.iou_threshold,
                num_points=cfg.num_recall_points,
                dont_care=[mask for _, mask in pools],
            )
    report = EvalReport(
        num_frames=len(ground_truth),
        num_points=cfg.num_recall_points,
        iou_threshold=cfg.iou_threshold,
        results=results,
    )
    logger.info(
        f"Evaluated {report.num_frames} frames: mAP_3D={report.mean_ap('3d'):.2f} "
        f"mAP_BEV={report.mean_ap('bev'):.2f}"
    )
    return report
