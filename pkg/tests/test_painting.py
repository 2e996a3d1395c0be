# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Tests for point painting."""

import numpy as np
import pytest

from semantic_voxels.core.errors import DimensionMismatch, InvalidScore
from semantic_voxels.core.types import Calibration, PointCloud
from semantic_voxels.encoders.painting import (
    PaintedPointCloud,
    SegScoreMap,
    complete_background,
    paint,
)


def _uniform_map(width: int, height: int) -> SegScoreMap:
    scores = np.tile([0.0, 0.0, 0.0, 1.0], (height, width, 1))
    return SegScoreMap(scores=scores)


class TestCompleteBackground:
    """Test the background completion of three-class scores."""

    def test_pure_background(self):
        """Test that no foreground gives the pure background vector."""
        seg = complete_background(np.zeros((1, 1, 3)))
        assert seg.scores[0, 0].tolist() == [0.0, 0.0, 0.0, 1.0]

    def test_exact_complement(self):
        """Test that background is one minus the foreground."""
        seg = complete_background(np.array([[[0.7, 0.1, 0.1]]]))
        assert np.allclose(seg.scores[0, 0], [0.7, 0.1, 0.1, 0.1], atol=1e-6)

    def test_overflow_renormalised(self):
        """Test that foreground summing above one is rescaled and background is zero."""
        seg = complete_background(np.array([[[0.6, 0.3, 0.2]]]))
        assert np.allclose(seg.scores[0, 0], [0.6 / 1.1, 0.3 / 1.1, 0.2 / 1.1, 0.0], atol=1e-6)

    def test_out_of_range_score(self):
        """Test that scores outside [0, 1] are rejected."""
        with pytest.raises(InvalidScore):
            complete_background(np.array([[[1.2, 0.0, 0.0]]]))
        with pytest.raises(InvalidScore):
            complete_background(np.array([[[-0.01, 0.0, 0.0]]]))

    def test_score_map_rejects_bad_sums(self):
        """Test that a score map must sum to one per pixel."""
        with pytest.raises(ValueError):
            SegScoreMap(scores=np.full((1, 1, 4), 0.5))


class TestPaint:
    """Test appending pixel scores to points."""

    def test_known_pixels(self):
        """Test three points that land on three known pixels."""
        calib = Calibration.identity(4, 3)
        expected = np.array(
            [[1.0, 0.0, 0.0, 0.0], [0.2, 0.3, 0.1, 0.4], [0.0, 0.0, 1.0, 0.0]], dtype=np.float32
        )
        # identity calibration: pixel (u, v) = (x / z, y / z)
        cloud = PointCloud(
            points=[[0.5, 0.5, 1.0, 0.1], [3.9, 2.2, 1.0, 0.2], [4.0, 2.0, 2.0, 0.3]]
        )
        scores = np.tile(np.array([0.0, 0.0, 0.0, 1.0], dtype=np.float32), (3, 4, 1))
        scores[0, 0] = expected[0]
        scores[2, 3] = expected[1]
        scores[1, 2] = expected[2]

        painted = paint(cloud, SegScoreMap(scores=scores), calib)

        assert np.array_equal(painted.scores, expected)
        assert np.array_equal(painted.xyzr, cloud.points)

    def test_behind_camera_and_outside_image(self):
        """Test that unprojectable points get the background vector."""
        calib = Calibration.identity(4, 3)
        scores = np.tile([1.0, 0.0, 0.0, 0.0], (3, 4, 1))
        cloud = PointCloud(
            points=[[0.5, 0.5, -1.0, 0.0], [40.0, 0.5, 1.0, 0.0], [0.5, 0.5, 1.0, 0.0]]
        )

        painted = paint(cloud, SegScoreMap(scores=scores), calib)

        assert painted.scores[0].tolist() == [0.0, 0.0, 0.0, 1.0]
        assert painted.scores[1].tolist() == [0.0, 0.0, 0.0, 1.0]
        assert painted.scores[2].tolist() == [1.0, 0.0, 0.0, 0.0]

    def test_dimension_mismatch(self):
        """Test that map and calibration sizes must agree."""
        with pytest.raises(DimensionMismatch):
            paint(PointCloud(), _uniform_map(5, 3), Calibration.identity(4, 3))

    def test_strip_and_permutation(self):
        """Test that stripping recovers the cloud and permuting commutes with painting."""
        rng = np.random.default_rng(0)
        calib = Calibration.identity(8, 6)
        raw = rng.uniform([-2, -2, 0.5, 0], [9, 7, 2, 1], size=(200, 4))
        cloud = PointCloud(points=raw)
        three = rng.dirichlet(np.ones(4), size=(6, 8))[..., :3]
        seg = complete_background(three)

        painted = paint(cloud, seg, calib)
        order = rng.permutation(len(cloud))
        permuted = paint(PointCloud(points=cloud.points[order]), seg, calib)

        assert np.array_equal(painted.strip().points, cloud.points)
        assert np.array_equal(permuted.points, painted.points[order])
        assert np.allclose(painted.scores.sum(axis=1), 1.0, atol=1e-4)

    def test_empty_cloud(self):
        """Test that an empty cloud paints to an empty (N, 8) cloud."""
        painted = paint(PointCloud(), _uniform_map(4, 3), Calibration.identity(4, 3))
        assert painted.points.shape == (0, 8)

    def test_painted_cloud_validation(self):
        """Test that painted clouds need eight columns."""
        with pytest.raises(ValueError):
            PaintedPointCloud(points=np.zeros((2, 5)))
