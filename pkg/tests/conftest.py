# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Shared fixtures."""

import pytest

from semantic_voxels.config.loader import load_config
from semantic_voxels.config.models import GridConfig


@pytest.fixture
def small_grid():
    """10 x 10 pillar grid with ten 0.3 m z slices."""
    return GridConfig(
        x_range=(0.0, 1.6),
        y_range=(-0.8, 0.8),
        z_range=(-2.5, 0.5),
        pillar_size=0.16,
        z_resolution=0.3,
        max_pillars=50,
        max_points_per_pillar=4,
    )


@pytest.fixture
def desk_config():
    """Reduced configuration used for pipeline-level tests."""
    return load_config(preset="desk")
