# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Tests for decoding, NMS and the AP protocol."""

import math

import numpy as np
import pytest

from semantic_voxels.config.models import EvalConfig
from semantic_voxels.core.geometry import iou_bev
from semantic_voxels.core.types import Box3D
from semantic_voxels.data.kitti import ObjectLabel
from semantic_voxels.evaluation.kitti_eval import (
    DifficultyLabel,
    average_precision,
    classify_difficulty,
    evaluate,
    recall_points,
)
from semantic_voxels.evaluation.plots import plot_pr_curves
from semantic_voxels.evaluation.postprocess import Detection, decode_detections, nms_bev
from semantic_voxels.network.head import HeadOutput
from semantic_voxels.training.targets import direction_bits, encode_boxes

ANCHORS = np.array(
    [[[[10.0, 0.0, -0.6, 0.8, 0.6, 1.73, 0.0], [10.0, 0.0, -0.6, 0.8, 0.6, 1.73, math.pi / 2]]]]
)


def _ped(x: float, y: float = 0.0, theta: float = 0.0) -> Box3D:
    return Box3D(x=x, y=y, z=-0.8, l=0.8, w=0.6, h=1.7, theta=theta)


def _label(
    box: Box3D,
    height: float = 100.0,
    occlusion: int = 0,
    truncation: float = 0.0,
    kind: str = "Pedestrian",
) -> ObjectLabel:
    return ObjectLabel(
        object_type=kind,
        truncation=truncation,
        occlusion=occlusion,
        bbox=(500.0, 100.0, 540.0, 100.0 + height),
        box=box,
    )


def _head(cls, box, direction) -> HeadOutput:
    return HeadOutput(
        cls_logits=np.asarray(cls, dtype=np.float64).reshape(1, 1, 2),
        box_deltas=np.asarray(box, dtype=np.float64).reshape(1, 1, 2, 7),
        dir_logits=np.asarray(direction, dtype=np.float64).reshape(1, 1, 2, 2),
    )


def _reference_nms(dets: list[Detection], threshold: float) -> list[Detection]:
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    kept: list[int] = []
    for i in order:
        if all(iou_bev(dets[i].box, dets[k].box) <= threshold for k in kept):
            kept.append(i)
    return [dets[i] for i in kept]


def _reference_ap(frames_dets, frames_gts, num_points: int, dont_care=None) -> float:
    """AP from every score cut-off, each matched from scratch with scalar IoU."""
    if dont_care is None:
        dont_care = [[False] * len(gts) for gts in frames_gts]
    num_gt = sum(not flag for flags in dont_care for flag in flags)
    if num_gt == 0:
        return 0.0
    overlaps = [
        [[iou_bev(det.box, gt) for gt in gts] for det in dets]
        for dets, gts in zip(frames_dets, frames_gts)
    ]
    ranked = sorted(
        ((-det.score, f, d) for f, dets in enumerate(frames_dets) for d, det in enumerate(dets))
    )

    curve = []
    for cut in range(1, len(ranked) + 1):
        taken = [set() for _ in frames_gts]
        tp = fp = 0
        for _, f, d in ranked[:cut]:
            choice = None
            for want_dont_care in (False, True):
                best = -1.0
                for g, overlap in enumerate(overlaps[f][d]):
                    usable = g not in taken[f] and dont_care[f][g] == want_dont_care
                    if usable and overlap >= 0.5 and overlap > best:
                        best, choice = overlap, g
                if choice is not None:
                    break
            if choice is None:
                fp += 1
                continue
            taken[f].add(choice)
            if not dont_care[f][choice]:
                tp += 1
        if tp + fp:
            curve.append((tp / num_gt, tp / (tp + fp)))

    total = 0.0
    for r in recall_points(num_points):
        total += max((p for rec, p in curve if rec >= r), default=0.0)
    return 100.0 * total / num_points


def _random_scene(rng: np.random.Generator, num_frames: int = 3):
    frames_gts, frames_dets = [], []
    for _ in range(num_frames):
        count = int(rng.integers(0, 4))
        gts = [_ped(8.0 + 4.0 * k, rng.uniform(-1, 1), rng.uniform(-3, 3)) for k in range(count)]
        dets = []
        for gt in gts:
            if rng.random() < 0.8:
                jitter = rng.normal(scale=0.15, size=2)
                box = gt.model_copy(update={"x": gt.x + jitter[0], "y": gt.y + jitter[1]})
                dets.append(Detection(box=box, score=float(rng.random())))
        for _ in range(int(rng.integers(0, 3))):
            stray = _ped(rng.uniform(5, 40), rng.uniform(-15, -5))
            dets.append(Detection(box=stray, score=float(rng.random())))
        frames_gts.append(gts)
        frames_dets.append(dets)
    return frames_dets, frames_gts


def _random_scene_set(rng: np.random.Generator):
    """Up to 5 frames of up to 8 gts and 8 detections; some gts are don't-care."""
    frames_dets, frames_gts, frames_dc = [], [], []
    for _ in range(int(rng.integers(1, 6))):
        count = int(rng.integers(0, 9))
        gts = [_ped(8.0 + 4.0 * k, rng.uniform(-1, 1), rng.uniform(-3, 3)) for k in range(count)]
        # harder-than-evaluated pedestrians and Person_sitting both act as don't-care
        dont_care = [bool(rng.random() < 0.3) for _ in gts]
        dets = []
        for gt in gts:
            for _ in range(int(rng.choice([0, 1, 1, 2]))):
                jitter = rng.normal(scale=0.2, size=2)
                box = gt.model_copy(update={"x": gt.x + jitter[0], "y": gt.y + jitter[1]})
                dets.append(Detection(box=box, score=float(rng.random())))
        for _ in range(int(rng.integers(0, 3))):
            stray = _ped(rng.uniform(5, 40), rng.uniform(-15, -5))
            dets.append(Detection(box=stray, score=float(rng.random())))
        order = rng.permutation(len(dets))[:8]
        frames_dets.append([dets[i] for i in order])
        frames_gts.append(gts)
        frames_dc.append(dont_care)
    return frames_dets, frames_gts, frames_dc


class TestDecode:
    """Test decoding of head outputs."""

    def test_all_negative(self):
        """Test that confident background yields nothing."""
        head = _head([-20.0, -20.0], np.zeros((2, 7)), np.zeros((2, 2)))
        assert decode_detections(head, ANCHORS, 0.05) == []

    def test_zero_delta_is_anchor(self):
        """Test that a zero delta with a consistent direction reproduces the anchor."""
        head = _head([5.0, -20.0], np.zeros((2, 7)), [[-5.0, 5.0], [0.0, 0.0]])
        dets = decode_detections(head, ANCHORS, 0.05)

        assert len(dets) == 1
        assert dets[0].box.to_array() == pytest.approx(ANCHORS[0, 0, 0])
        assert dets[0].score == pytest.approx(1 / (1 + math.exp(-5.0)))

    def test_direction_flip(self):
        """Test that a disagreeing direction bin turns the heading by pi."""
        deltas = np.zeros((2, 7))
        deltas[0, 6] = 0.3
        head = _head([5.0, -20.0], deltas, [[5.0, -5.0], [0.0, 0.0]])
        dets = decode_detections(head, ANCHORS, 0.05)
        assert dets[0].box.theta == pytest.approx(0.3 - math.pi)

    def test_encode_decode_reproduces_boxes(self):
        """Test that encoded targets with confident logits decode to the boxes."""
        rng = np.random.default_rng(0)
        for _ in range(50):
            gt = _ped(10.0 + rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-3, 3))
            target = gt.to_array()
            deltas = encode_boxes(np.stack([target, target]), ANCHORS.reshape(2, 7))
            bits = direction_bits(np.full(2, gt.theta), ANCHORS.reshape(2, 7)[:, 6])
            direction = np.where(bits[:, None] == 1, [-5.0, 5.0], [5.0, -5.0])

            dets = decode_detections(_head([8.0, 8.0], deltas, direction), ANCHORS, 0.05)

            for det in dets:
                assert det.box.to_array() == pytest.approx(target, abs=1e-5)

    @pytest.mark.parametrize("size_delta", [-800.0, 800.0])
    def test_extreme_size_deltas(self, size_delta):
        """Test that diverged size outputs still decode to valid boxes."""
        deltas = np.zeros((2, 7))
        deltas[:, 3:6] = size_delta
        head = _head([5.0, 5.0], deltas, np.zeros((2, 2)))

        dets = decode_detections(head, ANCHORS, 0.05)

        assert len(dets) == 2
        for det in dets:
            sizes = np.array([det.box.l, det.box.w, det.box.h])
            assert np.all(np.isfinite(sizes)) and np.all(sizes > 0)

    def test_overflowing_center_dropped(self):
        """Test that a candidate whose center overflows is skipped, not raised."""
        deltas = np.zeros((2, 7))
        deltas[0, 2] = 1e308
        head = _head([5.0, 5.0], deltas, [[-5.0, 5.0], [-5.0, 5.0]])

        with np.errstate(over="ignore"):
            dets = decode_detections(head, ANCHORS, 0.05)

        assert len(dets) == 1
        assert dets[0].box.theta == pytest.approx(math.pi / 2)


class TestNMS:
    """Test rotated BEV suppression."""

    def test_single(self):
        """Test that one detection passes through."""
        det = Detection(box=_ped(10.0), score=0.5)
        assert nms_bev([det]) == [det]

    def test_identical_pair(self):
        """Test that the lower-scored duplicate is dropped."""
        high, low = Detection(box=_ped(10.0), score=0.9), Detection(box=_ped(10.0), score=0.8)
        assert nms_bev([low, high]) == [high]

    def test_overlap_chain(self):
        """Test a 0.6-overlap pair next to a separate box."""
        a = Detection(box=_ped(10.0), score=0.9)
        b = Detection(box=_ped(10.2), score=0.8)
        c = Detection(box=_ped(10.0, 3.0), score=0.7)
        assert iou_bev(a.box, b.box) == pytest.approx(0.6)

        assert nms_bev([a, b, c], 0.5) == [a, c]

    def test_against_reference(self):
        """Test random crowds against a pairwise greedy reference."""
        rng = np.random.default_rng(1)
        for _ in range(30):
            boxes = [
                _ped(rng.uniform(9, 12), rng.uniform(-1, 1), rng.uniform(-3, 3)) for _ in range(12)
            ]
            dets = [Detection(box=box, score=float(s)) for box, s in zip(boxes, rng.random(12))]
            kept = nms_bev(dets, 0.3)

            assert kept == _reference_nms(dets, 0.3)
            assert all(d in dets for d in kept)
            for i, first in enumerate(kept):
                for second in kept[i + 1 :]:
                    assert iou_bev(first.box, second.box) <= 0.3


class TestDifficulty:
    """Test the difficulty pools."""

    @pytest.mark.parametrize(
        ("height", "occlusion", "truncation", "level"),
        [
            (50.0, 0, 0.0, DifficultyLabel.EASY),
            (30.0, 1, 0.2, DifficultyLabel.MODERATE),
            (40.0, 2, 0.1, DifficultyLabel.HARD),
            (20.0, 3, 0.9, DifficultyLabel.NONE),
        ],
    )
    def test_classify(self, height, occlusion, truncation, level):
        """Test threshold table lookups."""
        assert classify_difficulty(height, occlusion, truncation) == level


class TestAveragePrecision:
    """Test AP matching and interpolation."""

    def test_perfect(self):
        """Test that one detection per gt gives 100."""
        gts = [[_ped(10.0), _ped(20.0)], [_ped(15.0)]]
        dets = [[Detection(box=b, score=0.9) for b in frame] for frame in gts]
        assert average_precision(dets, gts).ap == pytest.approx(100.0)

    def test_no_detections(self):
        """Test that missing every gt gives 0."""
        result = average_precision([[]], [[_ped(10.0)]])
        assert result.ap == 0.0
        assert result.num_fn == 1

    @pytest.mark.parametrize(
        ("points", "expected"),
        [(11, 100 * (6 + 5 * 2 / 3) / 11), (40, 100 * (20 + 20 * 2 / 3) / 40)],
    )
    def test_hand_enumerated_curve(self, points, expected):
        """Test TP, FP, TP at descending scores against the enumerated curve."""
        gts = [[_ped(10.0), _ped(20.0)]]
        dets = [
            [
                Detection(box=_ped(10.0), score=0.9),
                Detection(box=_ped(30.0), score=0.8),
                Detection(box=_ped(20.0), score=0.7),
            ]
        ]
        result = average_precision(dets, gts, num_points=points)

        assert result.ap == pytest.approx(expected)
        assert (result.num_tp, result.num_fp) == (2, 1)
        assert result.recall.tolist() == pytest.approx([0.5, 0.5, 1.0])
        assert result.precision.tolist() == pytest.approx([1.0, 0.5, 2 / 3])

    @pytest.mark.parametrize("points", [11, 40])
    def test_random_scenes_against_reference(self, points):
        """Test multi-frame random scenes against the cut-off enumeration."""
        rng = np.random.default_rng(points)
        for _ in range(25):
            dets, gts, dont_care = _random_scene_set(rng)
            result = average_precision(dets, gts, num_points=points, dont_care=dont_care)
            expected = _reference_ap(dets, gts, points, dont_care)
            assert result.ap == pytest.approx(expected, abs=1e-9)

    @pytest.mark.slow
    def test_thousand_scene_sets_against_reference(self):
        """Test 1,000 random scene sets with don't-care gts in both recall modes."""
        rng = np.random.default_rng(2024)
        for _ in range(1_000):
            dets, gts, dont_care = _random_scene_set(rng)
            for points in (11, 40):
                result = average_precision(dets, gts, num_points=points, dont_care=dont_care)
                expected = _reference_ap(dets, gts, points, dont_care)
                assert result.ap == pytest.approx(expected, abs=1e-9)

    def test_dropping_false_positive_never_hurts(self):
        """Test AP monotonicity under removal of a false positive."""
        rng = np.random.default_rng(7)
        for _ in range(25):
            dets, gts = _random_scene(rng)
            before = average_precision(dets, gts).ap
            for f, frame in enumerate(dets):
                for d, det in enumerate(frame):
                    if all(iou_bev(det.box, gt) < 0.5 for gt in gts[f]):
                        trimmed = [list(x) for x in dets]
                        del trimmed[f][d]
                        assert average_precision(trimmed, gts).ap >= before - 1e-9

    def test_dont_care_absorbs(self):
        """Test that matching a don't-care gt is neither rewarded nor penalised."""
        gts = [np.stack([_ped(10.0).to_array(), _ped(20.0).to_array()])]
        dets = [[Detection(box=_ped(10.0), score=0.9), Detection(box=_ped(20.0), score=0.95)]]

        result = average_precision(dets, gts, dont_care=[np.array([False, True])])

        assert result.num_gt == 1
        assert (result.num_tp, result.num_fp) == (1, 0)
        assert result.ap == pytest.approx(100.0)

    def test_frame_count_mismatch(self):
        """Test that detections and gts must cover the same frames."""
        with pytest.raises(ValueError):
            average_precision([[]], [[], []])


class TestEvaluate:
    """Test the full report."""

    def test_empty_scene_set(self):
        """Test that no frames give zero APs and counts."""
        report = evaluate([], [])
        assert report.mean_ap("3d") == 0.0
        assert report.results["bev"]["hard"].num_gt == 0

    def test_perfect_predictions(self):
        """Test 100 everywhere for exact detections over three frames."""
        labels = [[_label(_ped(10.0 + 5 * f)), _label(_ped(12.0 + 5 * f, 2.0))] for f in range(3)]
        dets = [[Detection(box=label.box, score=0.8) for label in frame] for frame in labels]

        report = evaluate(dets, labels)

        for metric in ("3d", "bev"):
            assert report.mean_ap(metric) == pytest.approx(100.0)

    def test_pool_nesting(self):
        """Test that harder pools count at least as many true positives."""
        labels = [
            [
                _label(_ped(10.0), height=60.0),
                _label(_ped(15.0), height=30.0, occlusion=1),
                _label(_ped(20.0), height=30.0, occlusion=2),
                _label(_ped(25.0), height=10.0),
            ]
        ]
        dets = [[Detection(box=label.box, score=0.9) for label in labels[0]]]

        report = evaluate(dets, labels)

        tps = [report.results["bev"][level].num_tp for level in ("easy", "moderate", "hard")]
        assert tps == [1, 2, 3]
        assert all(result.num_fp == 0 for result in report.results["3d"].values())
        assert report.mean_ap("bev") == pytest.approx(100.0)

    def test_mixed_scene_table(self):
        """Test a hand-computed 40-point AP with one miss and one false alarm."""
        sitting = _label(_ped(30.0), kind="Person_sitting")
        labels = [[_label(_ped(10.0)), _label(_ped(20.0)), sitting]]
        dets = [
            [
                Detection(box=_ped(10.0), score=0.9),
                Detection(box=_ped(40.0), score=0.8),
                Detection(box=_ped(30.0), score=0.7),
            ]
        ]

        report = evaluate(dets, labels, EvalConfig(num_recall_points=40))

        easy = report.results["bev"]["easy"]
        assert (easy.num_gt, easy.num_tp, easy.num_fp, easy.num_fn) == (2, 1, 1, 1)
        assert easy.ap == pytest.approx(50.0)
        frame = report.to_dataframe()
        assert len(frame) == 6
        assert set(frame["metric"]) == {"AP_3D", "AP_BEV"}

    def test_report_outputs(self, tmp_path):
        """Test the key-value text, the table and the PR chart."""
        labels = [[_label(_ped(10.0))]]
        report = evaluate([[Detection(box=_ped(10.0), score=0.9)]], labels)

        lines = report.to_key_values().splitlines()
        assert "ap_bev_easy=100.000000" in lines
        assert "map_3d=100.000000" in lines
        assert "ap_3d_hard_fn=0" in lines
        assert "mAP" in report.to_table()

        chart = plot_pr_curves(report, tmp_path / "charts" / "pr.png")
        assert chart.exists()
        assert chart.stat().st_size > 0
