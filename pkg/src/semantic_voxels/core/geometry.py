# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Camera projection and rotated-box overlap.

Box overlap follows the sequential-cutting approach: start from one rectangle
and clip it against every edge of the other (Sutherland-Hodgman), then take
the shoelace area of what remains.
"""

import math
from typing import NamedTuple

import numpy as np

from .types import Box3D, Calibration, PointCloud

CLIP_EPS = 1e-9
MIN_INTERSECTION_AREA = 1e-12

Polygon = list[tuple[float, float]]


class Projection(NamedTuple):
    """Per-point image coordinates; u and v are NaN where the point has no image."""

    u: np.ndarray
    v: np.ndarray
    in_image: np.ndarray
    depth: np.ndarray


def project_points(cloud: PointCloud, calib: Calibration) -> Projection:
    """
    Project LiDAR points into the image plane.

    Args:
        cloud: Points in the LiDAR frame
        calib: Frame calibration

    Returns:
        Projection with one entry per input point, order preserved. ``in_image``
        is true iff the point has positive camera depth and falls inside the
        half-open pixel ranges [0, width) x [0, height).
    """
    count = len(cloud)
    if count == 0:
        empty = np.zeros(0)
        return Projection(empty, empty.copy(), np.zeros(0, dtype=bool), empty.copy())

    homogeneous = np.ones((count, 4))
    homogeneous[:, :3] = cloud.points[:, :3]
    cam = calib.velo_to_rect() @ homogeneous.T
    depth = cam[2]
    image = calib.cam_to_image @ cam

    w = image[2]
    valid = (depth > 0) & (w > 0)
    safe_w = np.where(valid, w, 1.0)
    u = np.where(valid, image[0] / safe_w, np.nan)
    v = np.where(valid, image[1] / safe_w, np.nan)

    with np.errstate(invalid="ignore"):
        in_image = (
            valid
            & (u >= 0)
            & (u < calib.image_width)
            & (v >= 0)
            & (v < calib.image_height)
        )
    return Projection(u, v, in_image, depth)


def bev_corners(box: Box3D) -> np.ndarray:
    """
    Counter-clockwise BEV rectangle of a box.

    The length l extends along the heading axis, the width w across it.

    Returns:
        (4, 2) array of (x, y) vertices
    """
    return bev_corners_array(box.to_array()[None, :])[0]


def bev_corners_array(boxes: np.ndarray) -> np.ndarray:
    """Vectorised bev_corners for an (M, 7) box array; returns (M, 4, 2)."""
    boxes = np.asarray(boxes, dtype=np.float64)
    half_l = boxes[:, 3:4] / 2
    half_w = boxes[:, 4:5] / 2
    local_x = np.concatenate([half_l, half_l, -half_l, -half_l], axis=1)
    local_y = np.concatenate([-half_w, half_w, half_w, -half_w], axis=1)
    cos_t = np.cos(boxes[:, 6:7])
    sin_t = np.sin(boxes[:, 6:7])
    xs = boxes[:, 0:1] + cos_t * local_x - sin_t * local_y
    ys = boxes[:, 1:2] + sin_t * local_x + cos_t * local_y
    return np.stack([xs, ys], axis=-1)


def polygon_area(polygon: Polygon) -> float:
    """Signed shoelace area (positive for counter-clockwise)."""
    if len(polygon) < 3:
        return 0.0
    area = 0.0
    for (x1, y1), (x2, y2) in zip(polygon, polygon[1:] + polygon[:1]):
        area += x1 * y2 - y1 * x2
    return 0.5 * area


def clip_polygon(subject: Polygon, clipper: Polygon) -> Polygon:
    """
    Clip a polygon against a convex counter-clockwise polygon.

    Points within CLIP_EPS of an edge count as inside.
    """
    output = list(subject)
    for (ex1, ey1), (ex2, ey2) in zip(clipper, clipper[1:] + clipper[:1]):
        if len(output) < 3:
            return []
        dx, dy = ex2 - ex1, ey2 - ey1
        norm = math.hypot(dx, dy)
        if norm == 0.0:
            continue

        def side(p: tuple[float, float]) -> float:
            # distance to the left of the edge; >= 0 is inside
            return (dx * (p[1] - ey1) - dy * (p[0] - ex1)) / norm

        clipped: Polygon = []
        values = [side(p) for p in output]
        for s, t, s_val, t_val in zip(
            output, output[1:] + output[:1], values, values[1:] + values[:1]
        ):
            s_in = s_val >= -CLIP_EPS
            t_in = t_val >= -CLIP_EPS
            if s_in:
                clipped.append(s)
            if s_in != t_in:
                ratio = s_val / (s_val - t_val)
                clipped.append((s[0] + ratio * (t[0] - s[0]), s[1] + ratio * (t[1] - s[1])))
        output = clipped
    return output


def _intersection_area(corners_a: np.ndarray, corners_b: np.ndarray) -> float:
    subject = [(float(x), float(y)) for x, y in corners_a]
    clipper = [(float(x), float(y)) for x, y in corners_b]
    area = polygon_area(clip_polygon(subject, clipper))
    return area if area >= MIN_INTERSECTION_AREA else 0.0


def _vertical_overlap(a: np.ndarray, b: np.ndarray) -> float:
    top = min(a[2] + a[5] / 2, b[2] + b[5] / 2)
    bottom = max(a[2] - a[5] / 2, b[2] - b[5] / 2)
    return max(0.0, top - bottom)


def _iou_bev_arrays(a: np.ndarray, b: np.ndarray, corners_a: np.ndarray, corners_b: np.ndarray):
    inter = _intersection_area(corners_a, corners_b)
    if inter == 0.0:
        return 0.0
    union = a[3] * a[4] + b[3] * b[4] - inter
    return min(1.0, max(0.0, inter / union))


def _iou_3d_arrays(a: np.ndarray, b: np.ndarray, corners_a: np.ndarray, corners_b: np.ndarray):
    overlap_h = _vertical_overlap(a, b)
    if overlap_h <= 0.0:
        return 0.0
    inter = _intersection_area(corners_a, corners_b) * overlap_h
    if inter == 0.0:
        return 0.0
    union = a[3] * a[4] * a[5] + b[3] * b[4] * b[5] - inter
    return min(1.0, max(0.0, inter / union))


def iou_bev(a: Box3D, b: Box3D) -> float:
    """Rotated bird's-eye-view IoU of two boxes, in [0, 1]."""
    arr_a, arr_b = a.to_array(), b.to_array()
    return _iou_bev_arrays(arr_a, arr_b, bev_corners(a), bev_corners(b))


def iou_3d(a: Box3D, b: Box3D) -> float:
    """3D IoU: rotated BEV intersection times vertical overlap over the volume union."""
    arr_a, arr_b = a.to_array(), b.to_array()
    return _iou_3d_arrays(arr_a, arr_b, bev_corners(a), bev_corners(b))


def _candidate_pairs(boxes_a: np.ndarray, boxes_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs whose circumscribed circles intersect."""
    radius_a = 0.5 * np.hypot(boxes_a[:, 3], boxes_a[:, 4])
    radius_b = 0.5 * np.hypot(boxes_b[:, 3], boxes_b[:, 4])
    dx = boxes_a[:, None, 0] - boxes_b[None, :, 0]
    dy = boxes_a[:, None, 1] - boxes_b[None, :, 1]
    reach = radius_a[:, None] + radius_b[None, :]
    return np.nonzero(dx * dx + dy * dy < reach * reach)


def _overlap_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray, pair_fn) -> np.ndarray:
    boxes_a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 7)
    boxes_b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 7)
    result = np.zeros((boxes_a.shape[0], boxes_b.shape[0]))
    if result.size == 0:
        return result
    corners_a = bev_corners_array(boxes_a)
    corners_b = bev_corners_array(boxes_b)
    for i, j in zip(*_candidate_pairs(boxes_a, boxes_b)):
        result[i, j] = pair_fn(boxes_a[i], boxes_b[j], corners_a[i], corners_b[j])
    return result


def iou_bev_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise rotated BEV IoU of (N, 7) and (M, 7) box arrays; returns (N, M)."""
    return _overlap_matrix(boxes_a, boxes_b, _iou_bev_arrays)


def iou_3d_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise 3D IoU of (N, 7) and (M, 7) box arrays; returns (N, M)."""
    return _overlap_matrix(boxes_a, boxes_b, _iou_3d_arrays)


def box_corners_3d(box: Box3D) -> np.ndarray:
    """(8, 3) corners: the BEV rectangle at the bottom face, then at the top face."""
    bev = bev_corners(box)
    bottom = np.column_stack([bev, np.full(4, box.z - box.h / 2)])
    top = np.column_stack([bev, np.full(4, box.z + box.h / 2)])
    return np.vstack([bottom, top])


class ImageBox(NamedTuple):
    """Projected 2D extent of a 3D box; ``truncation`` is the share cut off by the image border."""

    bbox: tuple[float, float, float, float]
    truncation: float


def image_bbox(box: Box3D, calib: Calibration) -> ImageBox | None:
    """
    Axis-aligned image box of a 3D box's projected corners.

    Returns:
        ImageBox clipped to the image, or None if the box is behind the camera
        or entirely outside the image
    """
    corners = box_corners_3d(box)
    cloud = PointCloud(points=np.column_stack([corners, np.zeros(8)]))
    projection = project_points(cloud, calib)
    front = projection.depth > 0
    if not np.all(front):
        return None

    u_min, u_max = float(projection.u.min()), float(projection.u.max())
    v_min, v_max = float(projection.v.min()), float(projection.v.max())
    cu_min, cu_max = max(u_min, 0.0), min(u_max, float(calib.image_width))
    cv_min, cv_max = max(v_min, 0.0), min(v_max, float(calib.image_height))
    if cu_max <= cu_min or cv_max <= cv_min:
        return None

    full = (u_max - u_min) * (v_max - v_min)
    visible = (cu_max - cu_min) * (cv_max - cv_min)
    truncation = 0.0 if full <= 0 else max(0.0, 1.0 - visible / full)
    return ImageBox((cu_min, cv_min, cu_max, cv_max), truncation)
