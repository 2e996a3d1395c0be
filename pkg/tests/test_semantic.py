# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Tests for the semantic voxel encoder."""

import numpy as np
import pytest

from semantic_voxels.core.errors import ShapeMismatch
from semantic_voxels.encoders.semantic import (
    SemanticAggParams,
    stack_and_aggregate,
    stack_semantic,
    voxelize_semantic,
)

from .helpers import painted_cloud

PED = [1.0, 0.0, 0.0, 0.0]
CYC = [0.0, 1.0, 0.0, 0.0]


class TestVoxelize:
    """Test z voxelisation and class means."""

    def test_two_point_mean(self, small_grid):
        """Test the mean of two points sharing a voxel."""
        cloud = painted_cloud([[0.5, 0.05, -0.95], [0.5, 0.05, -0.9]], [PED, CYC])
        grid = voxelize_semantic(cloud, small_grid)

        assert len(grid) == 1
        assert grid.counts.tolist() == [2]
        assert grid.mean_scores[0].tolist() == [0.5, 0.5, 0.0, 0.0]

    def test_z_index(self, small_grid):
        """Test that z = -0.95 falls into slice 5."""
        grid = voxelize_semantic(painted_cloud([[0.5, 0.05, -0.95]], [PED]), small_grid)
        assert grid.coords[0, 2] == 5

    def test_empty_cloud(self, small_grid):
        """Test that an empty cloud gives an empty grid."""
        assert len(voxelize_semantic(painted_cloud(np.zeros((0, 3))), small_grid)) == 0

    def test_permutation_invariance(self, small_grid):
        """Test that point order does not change the grid."""
        rng = np.random.default_rng(0)
        xyz = rng.uniform([0, -0.8, -2.5], [1.6, 0.8, 0.5], size=(80, 3))
        scores = rng.dirichlet(np.ones(4), size=80)
        order = rng.permutation(80)

        base = voxelize_semantic(painted_cloud(xyz, scores), small_grid)
        shuffled = voxelize_semantic(painted_cloud(xyz[order], scores[order]), small_grid)

        assert np.array_equal(base.coords, shuffled.coords)
        assert np.array_equal(base.counts, shuffled.counts)
        assert np.allclose(base.mean_scores, shuffled.mean_scores, atol=1e-6)
        assert np.allclose(base.mean_scores.sum(axis=1), 1.0, atol=1e-4)

    def test_height_preserved(self, small_grid):
        """Test that the same scores at different heights stack differently."""
        low = [0.5, 0.05, -0.95]
        same_z = voxelize_semantic(painted_cloud([low, low], [PED, PED]), small_grid)
        split_z = voxelize_semantic(painted_cloud([low, [0.5, 0.05, 0.25]], [PED, PED]), small_grid)

        stacked_same = stack_semantic(same_z, small_grid)[:, 3, 5]
        stacked_split = stack_semantic(split_z, small_grid)[:, 3, 5]
        assert not np.array_equal(stacked_same, stacked_split)


class TestAggregate:
    """Test stacking and the 1x1 aggregation."""

    def test_constant_map(self, small_grid):
        """Test that zero weights output the bias everywhere."""
        bias = np.arange(8, dtype=np.float32)
        params = SemanticAggParams(weight=np.zeros((8, 40)), bias=bias)
        grid = voxelize_semantic(painted_cloud([[0.5, 0.05, -0.95]], [PED]), small_grid)

        fmap = stack_and_aggregate(grid, params, small_grid)
        assert fmap.values.shape == (8, 10, 10)
        assert np.all(fmap.values == bias[:, None, None])

    def test_one_hot_routing(self, small_grid):
        """Test a selector on (slice 5, pedestrian)."""
        weight = np.zeros((8, 40))
        weight[2, 5 * 4 + 0] = 1.0
        params = SemanticAggParams(weight=weight, bias=np.zeros(8))
        grid = voxelize_semantic(painted_cloud([[0.5, 0.05, -0.95]], [PED]), small_grid)

        values = stack_and_aggregate(grid, params, small_grid).values
        assert values[2, 3, 5] == 1.0
        assert np.count_nonzero(values) == 1

    def test_matrix_vector_oracle(self, small_grid):
        """Test a single occupied cell against W v + b."""
        rng = np.random.default_rng(1)
        params = SemanticAggParams(weight=rng.normal(size=(8, 40)), bias=rng.normal(size=8))
        scores = rng.dirichlet(np.ones(4), size=3)
        cloud = painted_cloud([[0.5, 0.05, -0.95], [0.5, 0.05, -0.2], [0.5, 0.05, 0.4]], scores)
        grid = voxelize_semantic(cloud, small_grid)

        vector = np.zeros(40)
        for z_index, s in zip([5, 7, 9], scores):
            vector[z_index * 4 : z_index * 4 + 4] = s
        expected = params.weight.astype(np.float64) @ vector + params.bias
        values = stack_and_aggregate(grid, params, small_grid).values
        assert np.allclose(values[:, 3, 5], expected, atol=1e-5)
        assert np.allclose(values[:, 0, 0], params.bias)

    def test_linearity(self, small_grid):
        """Test that scaling bias-free weights scales the output exactly."""
        rng = np.random.default_rng(2)
        weight = rng.normal(size=(8, 40)).astype(np.float32)
        xyz = rng.uniform([0, -0.8, -2.5], [1.6, 0.8, 0.5], size=(30, 3))
        cloud = painted_cloud(xyz, rng.dirichlet(np.ones(4), size=30))
        grid = voxelize_semantic(cloud, small_grid)

        base = SemanticAggParams(weight=weight, bias=np.zeros(8))
        doubled = SemanticAggParams(weight=2 * weight, bias=np.zeros(8))
        base_out = stack_and_aggregate(grid, base, small_grid).values
        doubled_out = stack_and_aggregate(grid, doubled, small_grid).values
        assert np.array_equal(doubled_out, 2 * base_out)

    def test_channel_mismatch(self, small_grid):
        """Test that the weight must consume Z * 4 channels."""
        params = SemanticAggParams(weight=np.zeros((8, 12)), bias=np.zeros(8))
        grid = voxelize_semantic(painted_cloud([[0.5, 0.05, -0.95]], [PED]), small_grid)
        with pytest.raises(ShapeMismatch):
            stack_and_aggregate(grid, params, small_grid)
