# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Configuration management for SemanticVoxels."""
