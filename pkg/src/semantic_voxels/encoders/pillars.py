# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Geometric branch: crop, pillarize, simplified PointNet and BEV scatter."""

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..config.models import GridConfig
from ..core.errors import DuplicateCoordinate, ShapeMismatch
from ..core.logging import get_logger
from ..core.types import FeatureMap, PointCloud
from .painting import PaintedPointCloud

logger = get_logger(__name__)

DECORATED_FEATURES = 9
POINTNET_CHUNK = 1024


class PillarTensor(BaseModel):
    """Fixed-size (D, P, N) pillar buffer.

    Pillar ``p`` occupies BEV cell ``pillar_coords[p]`` and holds
    ``num_points[p]`` decorated points; everything past the actual counts is
    zero. ``source_index[p, n]`` is the row of the point in the cropped cloud,
    or -1 for padding.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    data: np.ndarray
    pillar_coords: np.ndarray
    num_pillars: int
    num_points: np.ndarray
    source_index: np.ndarray

    @model_validator(mode="after")
    def validate_shapes(self):
        """Check that the buffers agree on P and N."""
        d, p, n = self.data.shape
        if d != DECORATED_FEATURES:
            raise ShapeMismatch(f"Pillar tensor must have D = 9, got {d}")
        if self.pillar_coords.shape != (p, 2) or self.num_points.shape != (p,):
            raise ShapeMismatch("Pillar coordinate and count buffers do not match P")
        if self.source_index.shape != (p, n):
            raise ShapeMismatch("Source index buffer does not match (P, N)")
        if not 0 <= self.num_pillars <= p:
            raise ShapeMismatch(f"num_pillars {self.num_pillars} outside [0, {p}]")
        return self

    @property
    def max_pillars(self) -> int:
        return int(self.data.shape[1])

    @property
    def max_points(self) -> int:
        return int(self.data.shape[2])

    def point_mask(self) -> np.ndarray:
        """(P, N) boolean mask of real (non-padded) point slots."""
        return np.arange(self.max_points)[None, :] < self.num_points[:, None]

    def active_coords(self) -> np.ndarray:
        """(num_pillars, 2) cell indices of the occupied pillars."""
        return self.pillar_coords[: self.num_pillars]


class PointNetParams(BaseModel):
    """Linear(9 -> C) + inference batch-norm of the simplified PointNet."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    weight: np.ndarray = Field(description="(C, 9) linear weights")
    bias: np.ndarray = Field(description="(C,) linear bias")
    bn_gamma: np.ndarray = Field(description="(C,) batch-norm scale")
    bn_beta: np.ndarray = Field(description="(C,) batch-norm shift")
    bn_mean: np.ndarray = Field(description="(C,) running mean")
    bn_var: np.ndarray = Field(description="(C,) running variance")
    eps: float = Field(default=1e-3, description="Batch-norm epsilon")

    @field_validator("weight", "bias", "bn_gamma", "bn_beta", "bn_mean", "bn_var", mode="before")
    @classmethod
    def validate_finite(cls, v, info):
        """Coerce to finite float32 arrays."""
        arr = np.asarray(v, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{info.field_name} contains non-finite values")
        return arr

    @model_validator(mode="after")
    def validate_layout(self):
        """Check (C, 9) weights, matching per-channel vectors and positive variance."""
        if self.weight.ndim != 2 or self.weight.shape[1] != DECORATED_FEATURES:
            raise ShapeMismatch(f"PointNet weight must be (C, 9), got {self.weight.shape}")
        channels = self.weight.shape[0]
        for name in ("bias", "bn_gamma", "bn_beta", "bn_mean", "bn_var"):
            if getattr(self, name).shape != (channels,):
                raise ShapeMismatch(f"PointNet {name} must have shape ({channels},)")
        if np.any(self.bn_var <= 0):
            raise ValueError("Batch-norm running variance must be positive")
        return self

    @classmethod
    def identity_bn(cls, weight: np.ndarray, bias: np.ndarray | None = None) -> "PointNetParams":
        """Params with the given linear layer and a pass-through batch-norm (eps 0)."""
        weight = np.asarray(weight, dtype=np.float32)
        channels = weight.shape[0]
        return cls(
            weight=weight,
            bias=np.zeros(channels) if bias is None else bias,
            bn_gamma=np.ones(channels),
            bn_beta=np.zeros(channels),
            bn_mean=np.zeros(channels),
            bn_var=np.ones(channels),
            eps=0.0,
        )

    @property
    def channels(self) -> int:
        return int(self.weight.shape[0])


def bev_cell_indices(xy: np.ndarray, grid: GridConfig) -> np.ndarray:
    """
    Map cropped (x, y) positions to (x_index, y_index) cells.

    Args:
        xy: (M, 2) positions inside the crop range
        grid: Grid configuration

    Returns:
        (M, 2) int64 cell indices clipped to the canvas
    """
    xy = np.asarray(xy, dtype=np.float64)
    xi = np.floor((xy[:, 0] - grid.x_range[0]) / grid.pillar_size).astype(np.int64)
    yi = np.floor((xy[:, 1] - grid.y_range[0]) / grid.pillar_size).astype(np.int64)
    # float division may land on the upper edge for points just inside the range
    xi = np.clip(xi, 0, grid.nx - 1)
    yi = np.clip(yi, 0, grid.ny - 1)
    return np.stack([xi, yi], axis=1)


def crop(cloud: PaintedPointCloud, cfg: GridConfig) -> PaintedPointCloud:
    """Keep points inside the half-open crop box, preserving order."""
    pts = cloud.points.astype(np.float64)
    mask = np.ones(len(cloud), dtype=bool)
    for axis, (lo, hi) in enumerate((cfg.x_range, cfg.y_range, cfg.z_range)):
        mask &= (pts[:, axis] >= lo) & (pts[:, axis] < hi)
    logger.debug(f"Crop kept {int(mask.sum())}/{len(cloud)} points")
    return cloud.subset(mask)


def _first_seen_groups(cells: np.ndarray, ny: int) -> tuple[np.ndarray, np.ndarray]:
    """Rank of each point's pillar in first-seen order, and the rank-ordered cells."""
    keys = cells[:, 0] * ny + cells[:, 1]
    _, first_index, inverse = np.unique(keys, return_index=True, return_inverse=True)
    order = np.argsort(first_index, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return rank[inverse.ravel()], cells[first_index[order]]


def pillarize(cloud: PaintedPointCloud, cfg: GridConfig) -> PillarTensor:
    """
    Group cropped points into pillars and decorate them.

    Pillars are enumerated in the order their first point appears; only the
    first ``max_pillars`` are kept. A pillar with more than
    ``max_points_per_pillar`` points keeps a uniform random subset (sorted,
    drawn from a generator seeded with ``cfg.rng_seed``). Decoration runs on
    the retained points: (x, y, z, r, x - x_c, y - y_c, z - z_c, x - x_p, y - y_p)
    with c the retained-point mean and p the pillar's cell center.

    Args:
        cloud: Cropped painted cloud
        cfg: Grid configuration

    Returns:
        PillarTensor of shape (9, P, N)
    """
    max_pillars, max_points = cfg.max_pillars, cfg.max_points_per_pillar
    data = np.zeros((DECORATED_FEATURES, max_pillars, max_points), dtype=np.float32)
    pillar_coords = np.zeros((max_pillars, 2), dtype=np.int64)
    num_points = np.zeros(max_pillars, dtype=np.int64)
    source_index = np.full((max_pillars, max_points), -1, dtype=np.int64)

    if len(cloud) == 0:
        return PillarTensor(
            data=data,
            pillar_coords=pillar_coords,
            num_pillars=0,
            num_points=num_points,
            source_index=source_index,
        )

    xyzr = cloud.xyzr.astype(np.float64)
    cells = bev_cell_indices(xyzr[:, :2], cfg)
    point_pillar, ordered_cells = _first_seen_groups(cells, cfg.ny)

    total_pillars = ordered_cells.shape[0]
    num_pillars = min(total_pillars, max_pillars)
    if total_pillars > max_pillars:
        logger.info(f"Scene has {total_pillars} pillars, keeping the first {max_pillars}")
    pillar_coords[:num_pillars] = ordered_cells[:num_pillars]

    kept = np.nonzero(point_pillar < num_pillars)[0]
    kept = kept[np.argsort(point_pillar[kept], kind="stable")]
    kept_pillar = point_pillar[kept]
    counts = np.bincount(kept_pillar, minlength=num_pillars)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    slot = np.arange(kept.size) - starts[kept_pillar]

    fits = slot < max_points
    source_index[kept_pillar[fits], slot[fits]] = kept[fits]

    rng = np.random.default_rng(cfg.rng_seed)
    overflowing = np.nonzero(counts > max_points)[0]
    for pillar in overflowing:
        members = kept[starts[pillar] : starts[pillar] + counts[pillar]]
        chosen = np.sort(rng.choice(members.size, size=max_points, replace=False))
        source_index[pillar] = members[chosen]
    if overflowing.size:
        logger.debug(f"Sampled {overflowing.size} pillars down to {max_points} points")

    num_points[:num_pillars] = np.minimum(counts, max_points)
    valid = source_index >= 0
    gathered = xyzr[np.where(valid, source_index, 0)]
    gathered[~valid] = 0.0

    denom = np.maximum(num_points, 1)[:, None]
    cluster_mean = gathered[:, :, :3].sum(axis=1) / denom
    centers = np.stack(
        [
            cfg.x_range[0] + (pillar_coords[:, 0] + 0.5) * cfg.pillar_size,
            cfg.y_range[0] + (pillar_coords[:, 1] + 0.5) * cfg.pillar_size,
        ],
        axis=1,
    )

    decorated = np.zeros((max_pillars, max_points, DECORATED_FEATURES))
    decorated[:, :, :4] = gathered
    decorated[:, :, 4:7] = gathered[:, :, :3] - cluster_mean[:, None, :]
    decorated[:, :, 7:9] = gathered[:, :, :2] - centers[:, None, :]
    decorated[~valid] = 0.0
    data[:] = np.transpose(decorated, (2, 0, 1))

    logger.debug(f"Pillarized {kept.size} points into {num_pillars} pillars")
    return PillarTensor(
        data=data,
        pillar_coords=pillar_coords,
        num_pillars=num_pillars,
        num_points=num_points,
        source_index=source_index,
    )


def flatten_pillars(tensor: PillarTensor) -> PointCloud:
    """Recover the retained (x, y, z, r) points in pillar order."""
    mask = tensor.point_mask()
    xyzr = np.transpose(tensor.data[:4], (1, 2, 0))[mask]
    return PointCloud(points=xyzr)


def pointnet_forward(tensor: PillarTensor, params: PointNetParams) -> np.ndarray:
    """
    Per-pillar features of the simplified PointNet.

    Each point goes through linear -> batch-norm -> ReLU; each pillar takes the
    channel-wise max over its actual points. Padded slots never reach the max.

    Args:
        tensor: Pillar buffer
        params: PointNet parameters

    Returns:
        (num_pillars, C) float32 feature matrix
    """
    count = tensor.num_pillars
    channels = params.channels
    features = np.zeros((count, channels), dtype=np.float32)
    if count == 0:
        return features

    scale = params.bn_gamma / np.sqrt(params.bn_var + np.float32(params.eps))
    shift = params.bn_beta - params.bn_mean * scale
    mask = tensor.point_mask()

    for start in range(0, count, POINTNET_CHUNK):
        stop = min(start + POINTNET_CHUNK, count)
        block = tensor.data[:, start:stop, :]
        # per-input accumulation keeps each point's arithmetic independent of its slot
        acc = np.broadcast_to(params.bias[:, None, None], (channels,) + block.shape[1:]).copy()
        for d in range(DECORATED_FEATURES):
            acc += params.weight[:, d, None, None] * block[d][None, :, :]
        acc = np.maximum(acc * scale[:, None, None] + shift[:, None, None], 0.0)
        acc = np.where(mask[None, start:stop, :], acc, -np.inf)
        features[start:stop] = acc.max(axis=2).T

    return features


def scatter(features: np.ndarray, coords: np.ndarray, cfg: GridConfig) -> FeatureMap:
    """
    Place per-pillar features on the dense BEV canvas.

    Args:
        features: (M, C) pillar features
        coords: (M, 2) pillar cell indices
        cfg: Grid configuration

    Returns:
        FeatureMap of shape (C, nx, ny); cells without a pillar are zero

    Raises:
        DuplicateCoordinate: If two pillars share a cell
        ShapeMismatch: If feature and coordinate counts differ or a cell is off-grid
    """
    features = np.asarray(features, dtype=np.float32)
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    if features.ndim != 2 or features.shape[0] != coords.shape[0]:
        raise ShapeMismatch(
            f"Got {features.shape[0] if features.ndim else 0} features for {coords.shape[0]} cells"
        )

    canvas = np.zeros((features.shape[1], cfg.nx, cfg.ny), dtype=np.float32)
    if coords.shape[0] == 0:
        return FeatureMap(values=canvas)

    if (
        np.any(coords < 0)
        or np.any(coords[:, 0] >= cfg.nx)
        or np.any(coords[:, 1] >= cfg.ny)
    ):
        raise ShapeMismatch(f"Pillar coordinates fall outside the {cfg.nx}x{cfg.ny} grid")

    keys = coords[:, 0] * cfg.ny + coords[:, 1]
    if np.unique(keys).size != keys.size:
        raise DuplicateCoordinate("Two pillars map to the same BEV cell")

    canvas[:, coords[:, 0], coords[:, 1]] = features.T
    return FeatureMap(values=canvas)
