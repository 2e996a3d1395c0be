# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""SemanticVoxels - LiDAR-camera fusion for 3D pedestrian detection."""

__version__ = "0.1.0"
__description__ = "Semantic point painting, pillar and semantic voxel encoding, multi-level fusion"
