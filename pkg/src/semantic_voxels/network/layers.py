# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Channels-first numpy layers for batch size one."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..core.errors import ShapeMismatch

ROW_CHUNK = 32


def conv2d(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    padding: int = 1,
) -> np.ndarray:
    """
    2D cross-correlation with zero padding.

    Args:
        x: (C_in, H, W) input
        weight: (C_out, C_in, k, k) kernel
        bias: Optional (C_out,) bias
        stride: Step in both spatial directions
        padding: Zero border width

    Returns:
        (C_out, H_out, W_out) with H_out = (H + 2 * padding - k) // stride + 1

    Raises:
        ShapeMismatch: If channel counts disagree
    """
    c_out, c_in, kh, kw = weight.shape
    if x.ndim != 3 or x.shape[0] != c_in:
        raise ShapeMismatch(f"conv2d expects {c_in} input channels, got shape {x.shape}")

    padded = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    h_out, w_out = windows.shape[1], windows.shape[2]

    out = np.empty((c_out, h_out, w_out), dtype=np.float32)
    for row in range(0, h_out, ROW_CHUNK):
        block = windows[:, row : row + ROW_CHUNK]
        out[:, row : row + ROW_CHUNK] = np.tensordot(weight, block, axes=([1, 2, 3], [0, 3, 4]))
    if bias is not None:
        out += bias[:, None, None]
    return out


def conv_transpose2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """
    Transposed convolution with kernel size equal to its stride.

    Each input cell expands into a non-overlapping s x s output patch.

    Args:
        x: (C_in, H, W) input
        weight: (C_in, C_out, s, s) kernel

    Returns:
        (C_out, H * s, W * s)
    """
    c_in, c_out, s, s2 = weight.shape
    if s != s2:
        raise ShapeMismatch(f"Transposed kernel must be square, got {weight.shape}")
    if x.ndim != 3 or x.shape[0] != c_in:
        raise ShapeMismatch(f"conv_transpose2d expects {c_in} input channels, got {x.shape}")
    _, h, w = x.shape
    out = np.einsum("chw,coab->ohawb", x, weight).reshape(c_out, h * s, w * s)
    if bias is not None:
        out = out + bias[:, None, None]
    return out.astype(np.float32, copy=False)


def batchnorm(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    mean: np.ndarray,
    var: np.ndarray,
    eps: float,
) -> np.ndarray:
    """Inference batch-norm over the channel axis of a (C, H, W) map."""
    scale = gamma / np.sqrt(var + eps)
    shift = beta - mean * scale
    return (x * scale[:, None, None] + shift[:, None, None]).astype(np.float32, copy=False)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def conv1x1(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Per-cell affine map: weight (C_out, C_in) applied to every cell of (C_in, H, W)."""
    if x.ndim != 3 or x.shape[0] != weight.shape[1]:
        raise ShapeMismatch(f"1x1 layer expects {weight.shape[1]} channels, got shape {x.shape}")
    out = np.tensordot(weight, x, axes=(1, 0))
    if bias is not None:
        out = out + bias[:, None, None]
    return out.astype(np.float32, copy=False)
