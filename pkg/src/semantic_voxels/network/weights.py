# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Named network parameters, their expected shapes, and random initialisation.

Parameter names:

* ``pfn.linear.weight`` (C, 9), ``pfn.linear.bias`` (C,), ``pfn.bn.{gamma,beta,mean,var}``
* ``semantic.conv.weight`` (K, Z*4), ``semantic.conv.bias`` (K,)  (not for ``none``)
* ``backbone.block{k}.conv{i}.weight`` (out, in, 3, 3), ``backbone.block{k}.bn{i}.*``
* ``backbone.deblock{k}.weight`` (in, out, s, s), ``backbone.deblock{k}.bn.*``
* ``head.{cls,box,dir}.{weight,bias}`` with A, 7A and 2A output rows
"""

import math

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from ..config.models import Config, FusionScheme
from ..core.errors import CheckpointError
from ..core.logging import get_logger
from ..encoders.pillars import DECORATED_FEATURES, PointNetParams
from ..encoders.semantic import SemanticAggParams

logger = get_logger(__name__)

FUSION_SCHEMES: tuple[FusionScheme, ...] = ("early", "middle", "late", "none")
BN_FIELDS = ("gamma", "beta", "mean", "var")
BOX_CODE_SIZE = 7
DIR_BINS = 2
FOCAL_PRIOR = 0.01


def _bn_shapes(prefix: str, channels: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.{field}": (channels,) for field in BN_FIELDS}


def block_input_channels(config: Config, scheme: FusionScheme) -> list[int]:
    """Input channels of the three backbone blocks under a fusion scheme."""
    semantic = config.semantic.channels
    filters = config.backbone.num_filters
    first = config.pointnet.channels + (semantic if scheme == "early" else 0)
    second = filters[0] + (semantic if scheme == "middle" else 0)
    return [first, second, filters[1]]


def head_input_channels(config: Config, scheme: FusionScheme) -> int:
    """Channels reaching the detection head under a fusion scheme."""
    late = config.semantic.channels if scheme == "late" else 0
    return config.backbone.out_channels + late


def expected_shapes(config: Config, scheme: FusionScheme) -> dict[str, tuple[int, ...]]:
    """
    Every parameter name and shape the network needs for a scheme.

    Args:
        config: Full configuration
        scheme: Fusion scheme

    Returns:
        Ordered mapping from parameter name to shape
    """
    pfn = config.pointnet.channels
    shapes: dict[str, tuple[int, ...]] = {
        "pfn.linear.weight": (pfn, DECORATED_FEATURES),
        "pfn.linear.bias": (pfn,),
        **_bn_shapes("pfn.bn", pfn),
    }
    if scheme != "none":
        stacked = config.grid.nz * config.semantic.num_classes
        shapes["semantic.conv.weight"] = (config.semantic.channels, stacked)
        shapes["semantic.conv.bias"] = (config.semantic.channels,)

    bb = config.backbone
    inputs = block_input_channels(config, scheme)
    for k in range(3):
        channels_in = inputs[k]
        for i in range(bb.layer_nums[k]):
            shapes[f"backbone.block{k + 1}.conv{i}.weight"] = (bb.num_filters[k], channels_in, 3, 3)
            shapes.update(_bn_shapes(f"backbone.block{k + 1}.bn{i}", bb.num_filters[k]))
            channels_in = bb.num_filters[k]
        up = bb.upsample_strides[k]
        shapes[f"backbone.deblock{k + 1}.weight"] = (bb.num_filters[k], bb.num_upsample_filters[k], up, up)
        shapes.update(_bn_shapes(f"backbone.deblock{k + 1}.bn", bb.num_upsample_filters[k]))

    head_in = head_input_channels(config, scheme)
    anchors = config.anchors.num_anchors
    for branch, rows in (("cls", anchors), ("box", anchors * BOX_CODE_SIZE), ("dir", anchors * DIR_BINS)):
        shapes[f"head.{branch}.weight"] = (rows, head_in)
        shapes[f"head.{branch}.bias"] = (rows,)
    return shapes


class NetworkWeights(BaseModel):
    """Immutable set of named float32 parameter tensors for one fusion scheme."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    scheme: FusionScheme
    tensors: dict[str, np.ndarray]

    @field_validator("tensors")
    @classmethod
    def validate_tensors(cls, v):
        """Store finite float32 copies."""
        converted = {}
        for name, value in v.items():
            arr = np.array(value, dtype=np.float32)
            if not np.all(np.isfinite(arr)):
                raise CheckpointError(f"Parameter {name} contains non-finite values")
            arr.setflags(write=False)
            converted[name] = arr
        return converted

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise CheckpointError(f"Missing parameter: {name}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def bn(self, prefix: str) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(gamma, beta, mean, var) of a batch-norm layer."""
        return tuple(self[f"{prefix}.{field}"] for field in BN_FIELDS)  # type: ignore[return-value]

    def check(self, config: Config) -> None:
        """
        Verify that every parameter required by the scheme is present with its shape.

        Raises:
            CheckpointError: On a missing parameter or a shape mismatch
        """
        for name, shape in expected_shapes(config, self.scheme).items():
            if self[name].shape != shape:
                raise CheckpointError(
                    f"Parameter {name} has shape {self[name].shape}, expected {shape}"
                )

    def pointnet_params(self, config: Config) -> PointNetParams:
        gamma, beta, mean, var = self.bn("pfn.bn")
        return PointNetParams(
            weight=self["pfn.linear.weight"],
            bias=self["pfn.linear.bias"],
            bn_gamma=gamma,
            bn_beta=beta,
            bn_mean=mean,
            bn_var=var,
            eps=config.pointnet.bn_eps,
        )

    def semantic_params(self) -> SemanticAggParams:
        return SemanticAggParams(
            weight=self["semantic.conv.weight"], bias=self["semantic.conv.bias"]
        )

    def replace(self, updates: dict[str, np.ndarray]) -> "NetworkWeights":
        """Copy with some tensors swapped out."""
        return NetworkWeights(scheme=self.scheme, tensors={**self.tensors, **updates})


def infer_scheme(tensors: dict[str, np.ndarray], config: Config) -> FusionScheme:
    """
    Identify the fusion scheme a parameter set was built for.

    Raises:
        CheckpointError: If no scheme matches the stored shapes
    """
    for scheme in FUSION_SCHEMES:
        expected = expected_shapes(config, scheme)
        if all(
            name in tensors and tuple(tensors[name].shape) == shape
            for name, shape in expected.items()
        ):
            return scheme
    raise CheckpointError("Checkpoint does not match any fusion scheme for this configuration")


def init_weights(config: Config, scheme: FusionScheme | None = None, seed: int = 0) -> NetworkWeights:
    """
    Random parameters for a scheme.

    Convolutions and linear layers are He-normal, batch-norm layers start at
    identity statistics with zero shift, and the classification bias is the
    focal prior -log((1 - pi) / pi) with pi = 0.01.

    Args:
        config: Full configuration
        scheme: Fusion scheme (defaults to ``config.backbone.fusion_scheme``)
        seed: Generator seed

    Returns:
        NetworkWeights
    """
    scheme = scheme or config.backbone.fusion_scheme
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}

    for name, shape in expected_shapes(config, scheme).items():
        field = name.rsplit(".", 1)[1]
        if field == "gamma" or field == "var":
            tensors[name] = np.ones(shape, dtype=np.float32)
        elif field in ("beta", "mean", "bias"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        elif name.startswith("head."):
            tensors[name] = rng.normal(0.0, 0.01, size=shape).astype(np.float32)
        elif name.startswith("backbone.deblock"):
            fan_in = shape[0]
            tensors[name] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape).astype(np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            tensors[name] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape).astype(np.float32)

    tensors["head.cls.bias"] = np.full(
        tensors["head.cls.bias"].shape, -math.log((1 - FOCAL_PRIOR) / FOCAL_PRIOR), dtype=np.float32
    )
    logger.info(f"Initialised {len(tensors)} parameters for the {scheme} scheme (seed {seed})")
    return NetworkWeights(scheme=scheme, tensors=tensors)
