# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Pedestrian anchor grid."""

import numpy as np

from ..config.models import AnchorConfig, GridConfig


def generate_anchors(grid: GridConfig, anchors: AnchorConfig | None = None) -> np.ndarray:
    """
    Place one anchor per rotation at every BEV cell center.

    Args:
        grid: Grid configuration
        anchors: Anchor prior (defaults to the pedestrian prior)

    Returns:
        (nx, ny, A, 7) float64 array of (x, y, z, l, w, h, theta); the anchor
        with flat index ``(x_index * ny + y_index) * A + a`` is
        ``result[x_index, y_index, a]``
    """
    anchors = anchors or AnchorConfig()
    xs = grid.x_range[0] + (np.arange(grid.nx) + 0.5) * grid.pillar_size
    ys = grid.y_range[0] + (np.arange(grid.ny) + 0.5) * grid.pillar_size
    rotations = np.asarray(anchors.rotations, dtype=np.float64)

    out = np.empty((grid.nx, grid.ny, rotations.size, 7))
    out[..., 0] = xs[:, None, None]
    out[..., 1] = ys[None, :, None]
    out[..., 2] = anchors.z_center
    out[..., 3] = anchors.length
    out[..., 4] = anchors.width
    out[..., 5] = anchors.height
    out[..., 6] = rotations[None, None, :]
    return out
