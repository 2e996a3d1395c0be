# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Detection head: three independent 1x1 convolutions over the fused BEV map."""

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from ..core.errors import ShapeMismatch
from ..core.types import FeatureMap
from .layers import conv1x1
from .weights import BOX_CODE_SIZE, DIR_BINS, NetworkWeights


class HeadParams(BaseModel):
    """Weights (rows, C) and biases (rows,) of the three head branches.

    Row ``a`` of the classification branch scores anchor ``a``; rows
    ``a * 7 .. a * 7 + 6`` regress its box delta and rows ``a * 2 .. a * 2 + 1``
    hold its direction logits.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    cls_weight: np.ndarray
    cls_bias: np.ndarray
    box_weight: np.ndarray
    box_bias: np.ndarray
    dir_weight: np.ndarray
    dir_bias: np.ndarray

    @field_validator("*", mode="before")
    @classmethod
    def validate_finite(cls, v, info):
        """Coerce to finite arrays (float64 is kept for gradients)."""
        arr = np.asarray(v)
        if arr.dtype != np.float64:
            arr = arr.astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{info.field_name} contains non-finite values")
        return arr

    @model_validator(mode="after")
    def validate_layout(self):
        """Branches agree on A and on the input channel count."""
        anchors = self.cls_weight.shape[0]
        channels = self.cls_weight.shape[1]
        expected = {
            "box_weight": (anchors * BOX_CODE_SIZE, channels),
            "dir_weight": (anchors * DIR_BINS, channels),
            "cls_bias": (anchors,),
            "box_bias": (anchors * BOX_CODE_SIZE,),
            "dir_bias": (anchors * DIR_BINS,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeMismatch(
                    f"Head {name} must have shape {shape}, got {getattr(self, name).shape}"
                )
        return self

    @classmethod
    def from_weights(cls, weights: NetworkWeights) -> "HeadParams":
        return cls(
            cls_weight=weights["head.cls.weight"],
            cls_bias=weights["head.cls.bias"],
            box_weight=weights["head.box.weight"],
            box_bias=weights["head.box.bias"],
            dir_weight=weights["head.dir.weight"],
            dir_bias=weights["head.dir.bias"],
        )

    def to_tensors(self) -> dict[str, np.ndarray]:
        """Checkpoint names of the head parameters."""
        return {
            "head.cls.weight": self.cls_weight,
            "head.cls.bias": self.cls_bias,
            "head.box.weight": self.box_weight,
            "head.box.bias": self.box_bias,
            "head.dir.weight": self.dir_weight,
            "head.dir.bias": self.dir_bias,
        }

    @property
    def num_anchors(self) -> int:
        return int(self.cls_weight.shape[0])

    @property
    def in_channels(self) -> int:
        return int(self.cls_weight.shape[1])

    def axpy(self, alpha: float, other: "HeadParams") -> "HeadParams":
        """self + alpha * other, in float64."""
        return HeadParams(
            **{
                name: getattr(self, name).astype(np.float64) + alpha * getattr(other, name)
                for name in HeadParams.model_fields
            }
        )


class HeadOutput(BaseModel):
    """Per-anchor raw head outputs on the (H, W) BEV grid."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    cls_logits: np.ndarray
    box_deltas: np.ndarray
    dir_logits: np.ndarray

    @model_validator(mode="after")
    def validate_layout(self):
        """Shapes (H, W, A), (H, W, A, 7) and (H, W, A, 2)."""
        if self.cls_logits.ndim != 3:
            raise ShapeMismatch(f"cls_logits must be (H, W, A), got {self.cls_logits.shape}")
        base = self.cls_logits.shape
        if self.box_deltas.shape != base + (BOX_CODE_SIZE,):
            raise ShapeMismatch(f"box_deltas must be {base + (BOX_CODE_SIZE,)}")
        if self.dir_logits.shape != base + (DIR_BINS,):
            raise ShapeMismatch(f"dir_logits must be {base + (DIR_BINS,)}")
        return self

    @property
    def num_anchors(self) -> int:
        return int(np.prod(self.cls_logits.shape))

    def flat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Outputs in anchor flat-index order: (M,), (M, 7), (M, 2)."""
        return (
            self.cls_logits.reshape(-1),
            self.box_deltas.reshape(-1, BOX_CODE_SIZE),
            self.dir_logits.reshape(-1, DIR_BINS),
        )

    @classmethod
    def from_flat(
        cls,
        cls_logits: np.ndarray,
        box_deltas: np.ndarray,
        dir_logits: np.ndarray,
        grid_shape: tuple[int, int, int],
    ) -> "HeadOutput":
        """Inverse of ``flat`` for an (H, W, A) grid."""
        return cls(
            cls_logits=np.asarray(cls_logits).reshape(grid_shape),
            box_deltas=np.asarray(box_deltas).reshape(grid_shape + (BOX_CODE_SIZE,)),
            dir_logits=np.asarray(dir_logits).reshape(grid_shape + (DIR_BINS,)),
        )


def head_forward(feat: FeatureMap, params: HeadParams) -> HeadOutput:
    """
    Apply the three 1x1 branches to every cell; no activation.

    Raises:
        ShapeMismatch: If the map's channel count differs from the head input
    """
    if feat.channels != params.in_channels:
        raise ShapeMismatch(f"Head expects {params.in_channels} channels, got {feat.channels}")
    anchors = params.num_anchors
    h, w = feat.spatial_shape

    cls_map = conv1x1(feat.values, params.cls_weight, params.cls_bias)
    box_map = conv1x1(feat.values, params.box_weight, params.box_bias)
    dir_map = conv1x1(feat.values, params.dir_weight, params.dir_bias)

    return HeadOutput(
        cls_logits=np.transpose(cls_map, (1, 2, 0)),
        box_deltas=np.transpose(box_map.reshape(anchors, BOX_CODE_SIZE, h, w), (2, 3, 0, 1)),
        dir_logits=np.transpose(dir_map.reshape(anchors, DIR_BINS, h, w), (2, 3, 0, 1)),
    )


def head_backward(feat: FeatureMap, grads: HeadOutput) -> HeadParams:
    """
    Gradients of a scalar loss with respect to the head parameters.

    Args:
        feat: Head input the forward pass ran on
        grads: Loss gradients with respect to each head output

    Returns:
        HeadParams holding float64 gradients
    """
    h, w, anchors = grads.cls_logits.shape
    if feat.spatial_shape != (h, w):
        raise ShapeMismatch(f"Gradient grid {(h, w)} does not match feature map {feat.spatial_shape}")
    x = feat.values.reshape(feat.channels, -1).astype(np.float64)

    def branch(g: np.ndarray, rows: int) -> tuple[np.ndarray, np.ndarray]:
        # (H, W, A[, k]) -> (A * k, H * W) with row a * k + j
        g = g.reshape(h * w, rows).T.astype(np.float64)
        return g @ x.T, g.sum(axis=1)

    cls_w, cls_b = branch(grads.cls_logits, anchors)
    box_w, box_b = branch(grads.box_deltas, anchors * BOX_CODE_SIZE)
    dir_w, dir_b = branch(grads.dir_logits, anchors * DIR_BINS)
    return HeadParams(
        cls_weight=cls_w,
        cls_bias=cls_b,
        box_weight=box_w,
        box_bias=box_b,
        dir_weight=dir_w,
        dir_bias=dir_b,
    )
