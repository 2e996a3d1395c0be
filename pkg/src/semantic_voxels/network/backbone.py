# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Three-block BEV backbone and the early/middle/late fusion wiring."""

import numpy as np

from ..config.models import BackboneConfig, FusionScheme
from ..core.errors import ShapeMismatch
from ..core.logging import get_logger
from ..core.types import FeatureMap
from .layers import batchnorm, conv2d, conv_transpose2d, relu
from .weights import NetworkWeights

logger = get_logger(__name__)


def concat_features(*maps: FeatureMap) -> FeatureMap:
    """
    Channel-wise concatenation of maps with equal spatial size.

    Raises:
        ShapeMismatch: If the spatial sizes differ
    """
    shapes = {m.spatial_shape for m in maps}
    if len(shapes) != 1:
        raise ShapeMismatch(f"Cannot concatenate feature maps of spatial sizes {sorted(shapes)}")
    return FeatureMap(values=np.concatenate([m.values for m in maps], axis=0))


def _conv_block(x: np.ndarray, k: int, cfg: BackboneConfig, weights: NetworkWeights) -> np.ndarray:
    for i in range(cfg.layer_nums[k]):
        stride = cfg.layer_strides[k] if i == 0 else 1
        x = conv2d(x, weights[f"backbone.block{k + 1}.conv{i}.weight"], stride=stride, padding=1)
        x = relu(batchnorm(x, *weights.bn(f"backbone.block{k + 1}.bn{i}"), eps=cfg.bn_eps))
    return x


def _deblock(
    x: np.ndarray, k: int, cfg: BackboneConfig, weights: NetworkWeights, size: tuple[int, int]
) -> np.ndarray:
    up = conv_transpose2d(x, weights[f"backbone.deblock{k + 1}.weight"])
    up = relu(batchnorm(up, *weights.bn(f"backbone.deblock{k + 1}.bn"), eps=cfg.bn_eps))
    # odd sizes round up through the strided blocks; crop back to block-1 size
    return up[:, : size[0], : size[1]]


def backbone_forward(
    features: FeatureMap,
    cfg: BackboneConfig,
    weights: NetworkWeights,
    semantic: FeatureMap | None = None,
) -> FeatureMap:
    """
    Run the three convolutional blocks and concatenate their upsampled outputs.

    Block 1 keeps the resolution, blocks 2 and 3 each halve it; every block
    output is upsampled back to block-1 size by a transposed convolution.

    Args:
        features: BEV features (C, H, W)
        cfg: Backbone configuration
        weights: Network parameters
        semantic: Map joined to the block-1 output before block 2 (middle fusion)

    Returns:
        FeatureMap of shape (sum(num_upsample_filters), H, W)

    Raises:
        ShapeMismatch: If input channels disagree with the weights
    """
    x = features.values
    size = features.spatial_shape

    block1 = _conv_block(x, 0, cfg, weights)
    block2_input = block1
    if semantic is not None:
        block2_input = concat_features(FeatureMap(values=block1), semantic).values
    block2 = _conv_block(block2_input, 1, cfg, weights)
    block3 = _conv_block(block2, 2, cfg, weights)

    upsampled = [
        _deblock(block, k, cfg, weights, size) for k, block in enumerate((block1, block2, block3))
    ]
    return FeatureMap(values=np.concatenate(upsampled, axis=0))


def fuse(
    geometric: FeatureMap,
    semantic: FeatureMap | None,
    scheme: FusionScheme,
    cfg: BackboneConfig,
    weights: NetworkWeights,
) -> FeatureMap:
    """
    Build the head input with semantic features joined at the scheme's depth.

    * early: semantic channels concatenated to the backbone input
    * middle: concatenated to the block-1 output
    * late: concatenated to the backbone output
    * none: geometric baseline, semantic map unused

    Raises:
        ShapeMismatch: If the two maps differ spatially
    """
    if scheme != weights.scheme:
        raise ShapeMismatch(f"Weights were built for the {weights.scheme} scheme, not {scheme}")
    if scheme == "none":
        return backbone_forward(geometric, cfg, weights)

    if semantic is None:
        raise ShapeMismatch(f"The {scheme} scheme needs a semantic feature map")
    if geometric.spatial_shape != semantic.spatial_shape:
        raise ShapeMismatch(
            f"Geometric map {geometric.spatial_shape} and semantic map "
            f"{semantic.spatial_shape} differ in size"
        )

    logger.debug(f"Fusing {geometric.channels}+{semantic.channels} channels ({scheme})")
    if scheme == "early":
        return backbone_forward(concat_features(geometric, semantic), cfg, weights)
    if scheme == "middle":
        return backbone_forward(geometric, cfg, weights, semantic=semantic)
    return concat_features(backbone_forward(geometric, cfg, weights), semantic)
