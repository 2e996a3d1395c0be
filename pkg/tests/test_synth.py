# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Tests for the synthetic scene generator."""

import numpy as np
import pytest

from semantic_voxels.data.kitti import PEDESTRIAN
from semantic_voxels.data.synth import SynthSceneSpec, synth_scene
from semantic_voxels.encoders.painting import paint


def _lone_pedestrian(fidelity: float, seed: int = 5) -> SynthSceneSpec:
    return SynthSceneSpec(
        seed=seed,
        num_pedestrians=1,
        num_poles=0,
        num_clutter=0,
        ground_points=0,
        fidelity=fidelity,
        x_range=(10.0, 20.0),
        y_range=(-2.0, 2.0),
    )


class TestSynthScene:
    """Test generated frames."""

    def test_deterministic(self):
        """Test that a seed reproduces the frame exactly."""
        spec = SynthSceneSpec(seed=11)
        first, second = synth_scene(spec), synth_scene(spec)

        assert np.array_equal(first.cloud.points, second.cloud.points)
        assert np.array_equal(first.scores.scores, second.scores.scores)
        assert [label.box for label in first.labels] == [label.box for label in second.labels]

    def test_seeds_differ(self):
        """Test that different seeds give different clouds."""
        assert not np.array_equal(
            synth_scene(SynthSceneSpec(seed=1)).cloud.points,
            synth_scene(SynthSceneSpec(seed=2)).cloud.points,
        )

    def test_labels(self):
        """Test frame id, label order and pedestrian metadata."""
        scene = synth_scene(SynthSceneSpec(seed=7, num_pedestrians=2, num_poles=2))

        assert scene.frame_id == "000007"
        kinds = [label.object_type for label in scene.labels]
        assert kinds[:2] == [PEDESTRIAN, PEDESTRIAN]
        assert all(kind != PEDESTRIAN for kind in kinds[2:])
        for label in scene.pedestrians():
            assert 1.5 <= label.box.h <= 1.9
            assert label.bbox_height > 0

    def test_full_fidelity_paints_pedestrian(self):
        """Test that every point of a lone pedestrian paints as pedestrian."""
        scene = synth_scene(_lone_pedestrian(fidelity=1.0))
        painted = paint(scene.cloud, scene.scores, scene.calib)

        assert len(painted) > 0
        assert np.all(painted.points[:, 4] >= 0.5)

    def test_zero_fidelity_paints_background(self):
        """Test that fidelity 0 leaves only background scores."""
        scene = synth_scene(_lone_pedestrian(fidelity=0.0))
        painted = paint(scene.cloud, scene.scores, scene.calib)

        assert np.all(painted.points[:, 4] == 0.0)
        assert np.allclose(painted.points[:, 7], 1.0)

    def test_score_map_is_distribution(self):
        """Test that the rendered image sums to one per pixel."""
        scene = synth_scene(SynthSceneSpec(seed=3, fidelity=0.7))
        assert np.allclose(scene.scores.scores.sum(axis=2), 1.0, atol=1e-5)

    @pytest.mark.parametrize(
        "updates",
        [{"fidelity": 1.5}, {"num_pedestrians": -1}, {"x_range": (-1.0, 5.0)}, {"noise": -0.1}],
    )
    def test_invalid_recipe(self, updates):
        """Test recipe validation."""
        with pytest.raises(ValueError):
            SynthSceneSpec(**updates)
