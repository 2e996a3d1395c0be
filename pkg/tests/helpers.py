# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Test data builders."""

import numpy as np

from semantic_voxels.encoders.painting import PaintedPointCloud


def painted_cloud(xyz, scores=None) -> PaintedPointCloud:
    """Painted cloud from (M, 3) positions with zero reflectance.

    Scores default to the background vector.
    """
    xyz = np.asarray(xyz, dtype=np.float32).reshape(-1, 3)
    if scores is None:
        scores = np.tile([0.0, 0.0, 0.0, 1.0], (xyz.shape[0], 1))
    scores = np.asarray(scores, dtype=np.float32).reshape(-1, 4)
    points = np.concatenate([xyz, np.zeros((xyz.shape[0], 1)), scores], axis=1)
    return PaintedPointCloud(points=points)
