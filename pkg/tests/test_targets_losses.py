# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Tests for anchors, target assignment and the loss stack."""

import math

import numpy as np
import pytest
from scipy.special import expit

from semantic_voxels.config.models import GridConfig, LossConfig
from semantic_voxels.core.errors import DomainError
from semantic_voxels.core.geometry import iou_bev_matrix
from semantic_voxels.core.types import Box3D
from semantic_voxels.network.head import HeadOutput
from semantic_voxels.training.anchors import generate_anchors
from semantic_voxels.training.gradcheck import numeric_gradient, run_gradcheck
from semantic_voxels.training.losses import (
    direction_loss,
    focal_loss,
    focal_loss_from_logits,
    regression_loss,
    smooth_l1,
    total_loss,
)
from semantic_voxels.training.targets import (
    IGNORED,
    MAX_LOG_SCALE,
    NEGATIVE,
    POSITIVE,
    BoxDelta,
    TargetAssignment,
    assign_targets,
    decode_box,
    decode_boxes,
    direction_bits,
    encode_box,
    encode_boxes,
)

ANCHOR = Box3D(x=0.0, y=0.0, z=-0.6, l=0.8, w=0.6, h=1.73, theta=0.0)


class TestAnchors:
    """Test the anchor grid."""

    def test_kitti_grid(self):
        """Test the first cell and the anchor count of the default canvas."""
        anchors = generate_anchors(GridConfig())

        assert anchors.shape == (300, 250, 2, 7)
        assert anchors.reshape(-1, 7).shape[0] == 150_000
        assert anchors[0, 0, 0, :2] == pytest.approx([0.08, -19.92])
        assert np.all(anchors[..., 3:6] == [0.8, 0.6, 1.73])
        assert np.all(anchors[..., 2] == -0.6)

    def test_flat_index(self, small_grid):
        """Test the flat anchor index convention."""
        flat = generate_anchors(small_grid).reshape(-1, 7)
        anchor = flat[(3 * 10 + 5) * 2 + 1]
        assert anchor[:2] == pytest.approx([0.56, 0.08])
        assert anchor[6] == pytest.approx(math.pi / 2)


class TestCodec:
    """Test the anchor-relative box encoding."""

    def test_identity(self):
        """Test that a box equal to its anchor encodes to zero."""
        assert np.allclose(encode_box(ANCHOR, ANCHOR).to_array(), 0.0)
        assert decode_box(BoxDelta(), ANCHOR) == ANCHOR

    def test_hand_evaluated_offsets(self):
        """Test a shifted and rotated box against hand evaluation."""
        gt = ANCHOR.model_copy(update={"x": 1.0, "y": 0.5, "z": -0.5, "theta": 0.1})
        delta = encode_box(gt, ANCHOR).to_array()
        assert delta == pytest.approx([1.0, 0.5, 0.1 / 1.73, 0.0, 0.0, 0.0, 0.1], abs=1e-9)
        assert delta[2] == pytest.approx(0.05780, abs=1e-5)

    def test_doubled_dimensions(self):
        """Test log ratios of doubled sizes."""
        gt = ANCHOR.model_copy(update={"l": 1.6, "w": 1.2, "h": 3.46})
        delta = encode_box(gt, ANCHOR)
        assert [delta.dl, delta.dw, delta.dh] == pytest.approx([math.log(2)] * 3)
        assert decode_box(BoxDelta(dl=math.log(2)), ANCHOR).l == pytest.approx(1.6)

    def test_round_trip(self):
        """Test decode(encode(gt)) over random boxes and anchors."""
        rng = np.random.default_rng(0)
        n = 10_000
        low, high = [-40, -40, -3, 0.2, 0.2, 0.5, -3], [40, 40, 1, 3, 3, 3, 3]
        gts = rng.uniform(low, high, size=(n, 7))
        anchors = rng.uniform(low, high, size=(n, 7))

        decoded = decode_boxes(encode_boxes(gts, anchors), anchors)
        assert np.allclose(decoded, gts, rtol=0, atol=1e-6)

    def test_decode_clamps_sizes(self):
        """Test that out-of-range size deltas decode to bounded positive sizes."""
        deltas = np.zeros((2, 7))
        deltas[0, 3:6] = -800.0
        deltas[1, 3:6] = 800.0
        anchors = np.tile(ANCHOR.to_array(), (2, 1))

        sizes = decode_boxes(deltas, anchors)[:, 3:6]

        base = anchors[0, 3:6]
        assert sizes[0] == pytest.approx(base * math.exp(-MAX_LOG_SCALE))
        assert sizes[1] == pytest.approx(base * math.exp(MAX_LOG_SCALE))

    def test_direction_bits(self):
        """Test the half-turn direction rule on the anchor-relative heading."""
        gt_theta = np.array([-0.1, 0.1, math.pi / 2 + 0.1, 3.0])
        bits = direction_bits(gt_theta, np.array([0, 0, math.pi / 2, 0]))
        assert bits.tolist() == [0, 1, 1, 1]


class TestAssignTargets:
    """Test IoU-based anchor labelling."""

    def test_no_ground_truth(self, small_grid):
        """Test that an empty scene makes every anchor negative."""
        result = assign_targets(generate_anchors(small_grid), [])
        assert result.num_positive == 0
        assert np.all(result.labels == NEGATIVE)

    def test_exact_anchor_match(self, small_grid):
        """Test that a box equal to an anchor makes it positive with a zero delta."""
        anchors = generate_anchors(small_grid)
        gt = Box3D.from_array(anchors[3, 5, 0])

        result = assign_targets(anchors, [gt])

        index = (3 * 10 + 5) * 2
        assert result.labels[index] == POSITIVE
        assert result.matched_gt[index] == 0
        assert np.allclose(result.box_targets[index], 0.0)
        assert result.dir_targets[index] == 1

    def test_single_forced_match(self, small_grid):
        """Test that a weakly overlapping box claims exactly its best anchor."""
        anchors = generate_anchors(small_grid)
        gt = Box3D(x=0.5, y=0.05, z=-0.6, l=0.2, w=0.2, h=1.73)
        iou = iou_bev_matrix(anchors.reshape(-1, 7), gt.to_array()[None, :])[:, 0]
        assert 0.0 < iou.max() < 0.35

        result = assign_targets(anchors, [gt])

        assert result.num_positive == 1
        assert result.positive_indices().tolist() == [int(np.argmax(iou))]
        assert not np.any(result.labels == IGNORED)

    def test_claimed_anchor_passes_to_next(self, small_grid):
        """Test that a second box with the same best anchor takes its next best."""
        anchors = generate_anchors(small_grid)
        gt = Box3D(x=0.5, y=0.05, z=-0.6, l=0.2, w=0.2, h=1.73)

        result = assign_targets(anchors, [gt, gt])

        positives = result.positive_indices()
        assert positives.size == 2
        assert sorted(result.matched_gt[positives].tolist()) == [0, 1]

    def test_every_overlapping_box_matched(self, small_grid):
        """Test the forced-match guarantee on random boxes."""
        rng = np.random.default_rng(1)
        anchors = generate_anchors(small_grid)
        for _ in range(20):
            count = int(rng.integers(1, 5))
            gts = np.column_stack(
                [
                    rng.uniform(0.0, 1.6, count),
                    rng.uniform(-0.8, 0.8, count),
                    np.full(count, -0.6),
                    rng.uniform(0.3, 1.2, count),
                    rng.uniform(0.3, 1.0, count),
                    np.full(count, 1.7),
                    rng.uniform(-math.pi, math.pi, count),
                ]
            )
            result = assign_targets(anchors, gts)
            matched = set(result.matched_gt[result.positive_indices()].tolist())
            assert matched == set(range(count))
            assert result.num_gts == count


class TestSmoothL1AndRegression:
    """Test the regression terms."""

    @pytest.mark.parametrize(
        ("x", "value", "grad"),
        [(0.0, 0.0, 0.0), (0.5, 0.125, 0.5), (2.0, 1.5, 1.0), (-2.0, 1.5, -1.0)],
    )
    def test_smooth_l1(self, x, value, grad):
        """Test both branches of smooth L1."""
        assert smooth_l1(x) == pytest.approx((value, grad))

    def test_zero_residual(self):
        """Test that equal deltas give zero loss."""
        delta = BoxDelta(dx=0.3, dl=-0.2, dtheta=1.0)
        value, grad = regression_loss(delta, delta)
        assert value == 0.0
        assert np.all(grad == 0.0)

    def test_half_turn_blindness(self):
        """Test that a residual heading of pi costs nothing."""
        value, _ = regression_loss(BoxDelta(dtheta=math.pi), BoxDelta())
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_single_term(self):
        """Test a residual on dx only."""
        value, grad = regression_loss(BoxDelta(dx=0.5), BoxDelta())
        assert value == pytest.approx(0.125)
        assert grad.tolist() == pytest.approx([0.5, 0, 0, 0, 0, 0, 0])


class TestDirectionLoss:
    """Test the two-bin heading classifier."""

    def test_confident_correct(self):
        """Test that a confident correct bin costs almost nothing."""
        value, _ = direction_loss([20.0, -20.0], 0)
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_uniform_logits(self):
        """Test ln 2 and a gradient of one half at zero logits."""
        value, grad = direction_loss([0.0, 0.0], 0)
        assert value == pytest.approx(math.log(2))
        assert grad.tolist() == pytest.approx([-0.5, 0.5])


class TestFocalLoss:
    """Test the focal classification loss."""

    def test_half_probability_positive(self):
        """Test a positive anchor at p = 0.5."""
        value, _ = focal_loss(0.5, True)
        assert value == pytest.approx(-0.25 * 0.25 * math.log(0.5), abs=1e-8)
        assert value == pytest.approx(0.04332, abs=1e-5)

    def test_confident_is_free(self):
        """Test that p_t near one costs nothing."""
        assert focal_loss(1.0, True)[0] == pytest.approx(0.0, abs=1e-12)
        assert focal_loss(0.0, False)[0] == pytest.approx(0.0, abs=1e-12)

    def test_cross_entropy_limit(self):
        """Test that gamma = 0 reduces to weighted cross-entropy."""
        cfg = LossConfig(focal_alpha=0.5, focal_gamma=0.0)
        value, _ = focal_loss(0.3, True, cfg)
        assert 2 * value == pytest.approx(-math.log(0.3))

    @pytest.mark.parametrize("p", [1.2, -0.1, float("nan")])
    def test_domain(self, p):
        """Test that probabilities outside [0, 1] are rejected."""
        with pytest.raises(DomainError):
            focal_loss(p, True)

    def test_logit_gradient(self):
        """Test the probability-input gradient against differences in the logit."""
        logits = np.array([-2.0, -0.3, 0.4, 1.7])
        positive = np.array([True, False, True, False])

        _, grad = focal_loss(expit(logits), positive)
        numeric = numeric_gradient(lambda z: focal_loss_from_logits(z, positive)[0], logits)
        assert np.allclose(grad, numeric, rtol=1e-4, atol=1e-7)

    def test_monotone_toward_target(self):
        """Test that moving logits toward their targets lowers both losses."""
        positive = np.array([True, False, False, True])
        sign = np.where(positive, 1.0, -1.0)
        steps = np.linspace(0.0, 5.0, 11)

        focal = [focal_loss_from_logits(t * sign, positive)[0] for t in steps]
        heading = [direction_loss([t, -t], 0)[0] for t in steps]
        assert np.all(np.diff(focal) < 0)
        assert np.all(np.diff(heading) < 0)


class TestTotalLoss:
    """Test the normalised total loss."""

    def _head(self, cls, box=None, direction=None) -> HeadOutput:
        cls = np.asarray(cls, dtype=np.float64).reshape(1, 1, -1)
        a = cls.shape[2]
        box = np.zeros((a, 7)) if box is None else box
        direction = np.zeros((a, 2)) if direction is None else direction
        box = np.asarray(box, dtype=np.float64).reshape(1, 1, a, 7)
        direction = np.asarray(direction, dtype=np.float64).reshape(1, 1, a, 2)
        return HeadOutput(cls_logits=cls, box_deltas=box, dir_logits=direction)

    def _assignment(self, labels, box_targets=None, dir_targets=None) -> TargetAssignment:
        labels = np.asarray(labels)
        n = labels.size
        if dir_targets is None:
            dir_targets = np.zeros(n, dtype=np.int64)
        return TargetAssignment(
            labels=labels,
            matched_gt=np.where(labels == POSITIVE, 0, -1),
            box_targets=np.zeros((n, 7)) if box_targets is None else np.asarray(box_targets),
            dir_targets=np.asarray(dir_targets),
            num_gts=1,
        )

    def test_no_positives(self):
        """Test that an empty scene is classification over negatives only."""
        logits = np.array([-1.0, 0.5, 2.0])
        result = total_loss(self._head(logits), self._assignment([NEGATIVE, NEGATIVE, IGNORED]))

        expected, _ = focal_loss_from_logits(logits[:2], np.array([False, False]))
        assert result.num_positive == 0
        assert result.value == pytest.approx(expected)
        assert result.gradients.cls_logits[0, 0, 2] == 0.0

    def test_perfect_prediction(self):
        """Test that exact targets and confident scores give a near-zero loss."""
        targets = np.array([[0.1, -0.2, 0.05, 0.1, 0.0, -0.1, 0.3], [0.0] * 7])
        direction = np.array([[-20.0, 20.0], [0.0, 0.0]])
        head = self._head([20.0, -20.0], box=targets, direction=direction)
        assignment = self._assignment([POSITIVE, NEGATIVE], box_targets=targets, dir_targets=[1, 0])

        result = total_loss(head, assignment)
        assert result.value < 1e-3

    def test_weighting_and_normaliser(self):
        """Test that components combine with their weights over N_pos."""
        rng = np.random.default_rng(0)
        head = self._head(
            rng.normal(size=4), box=rng.normal(size=(4, 7)), direction=rng.normal(size=(4, 2))
        )
        assignment = self._assignment(
            [POSITIVE, POSITIVE, NEGATIVE, IGNORED],
            box_targets=rng.normal(size=(4, 7)),
            dir_targets=[0, 1, 0, 0],
        )
        cfg = LossConfig()

        result = total_loss(head, assignment, cfg)

        weighted = cfg.beta_reg * result.regression + cfg.beta_dir * result.direction
        weighted += cfg.beta_cls * result.classification
        assert result.value == pytest.approx(weighted / 2)
        assert np.all(result.gradients.box_deltas[0, 0, 2:] == 0.0)
        assert np.all(result.gradients.dir_logits[0, 0, 3] == 0.0)

    def test_size_mismatch(self):
        """Test that assignment and head must cover the same anchors."""
        with pytest.raises(DomainError):
            total_loss(self._head([0.0, 0.0]), self._assignment([NEGATIVE]))


class TestGradientCheck:
    """Test analytic gradients against central differences."""

    def test_random_problems(self):
        """Test every loss on a hundred random problems."""
        report = run_gradcheck(seed=0, num_scenes=100)
        assert report.passed, report.failures[:5]
        assert report.num_checks > 0
