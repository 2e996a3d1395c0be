# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Detection losses with analytic gradients with respect to the raw head outputs.

All values and gradients are computed in float64. Every loss returns a
``(value, gradient)`` pair where the gradient has the shape of the
prediction it is taken against.
"""

from typing import NamedTuple

import numpy as np
from scipy.special import expit, log_expit, log_softmax, softmax

from ..config.models import LossConfig
from ..core.errors import DomainError
from ..network.head import HeadOutput
from .targets import NEGATIVE, POSITIVE, BoxDelta, TargetAssignment

PROB_CLAMP = 1e-7


def _as_delta_array(value) -> np.ndarray:
    if isinstance(value, BoxDelta):
        return value.to_array()
    return np.asarray(value, dtype=np.float64)


def smooth_l1(x):
    """
    Smooth L1 with its transition at |x| = 1.

    Returns:
        (value, gradient), elementwise for arrays
    """
    x = np.asarray(x, dtype=np.float64)
    small = np.abs(x) < 1.0
    value = np.where(small, 0.5 * x * x, np.abs(x) - 0.5)
    grad = np.where(small, x, np.sign(x))
    if value.ndim == 0:
        return float(value), float(grad)
    return value, grad


def regression_loss(pred, target) -> tuple[float, np.ndarray]:
    """
    Box regression loss summed over all rows.

    Smooth L1 over the six position and size residuals plus
    smooth_l1(sin(pred_theta - target_theta)) for the heading.

    Args:
        pred: Predicted deltas, BoxDelta or (..., 7) array
        target: Target deltas of the same layout

    Returns:
        (value, gradient with respect to pred)
    """
    pred_arr = _as_delta_array(pred)
    residual = pred_arr - _as_delta_array(target)

    value_lin, grad_lin = smooth_l1(residual[..., :6])
    angle = residual[..., 6]
    value_ang, grad_ang = smooth_l1(np.sin(angle))

    grad = np.empty_like(residual)
    grad[..., :6] = grad_lin
    grad[..., 6] = np.asarray(grad_ang) * np.cos(angle)
    value = float(np.sum(value_lin) + np.sum(value_ang))
    if isinstance(pred, BoxDelta):
        return value, grad.reshape(7)
    return value, grad


def direction_loss(dir_logits, target_bit) -> tuple[float, np.ndarray]:
    """
    Softmax cross-entropy over the two heading bins, summed over rows.

    Returns:
        (value, softmax - one_hot)
    """
    logits = np.asarray(dir_logits, dtype=np.float64)
    bits = np.asarray(target_bit, dtype=np.int64)
    log_prob = log_softmax(logits, axis=-1)
    one_hot = np.stack([bits == 0, bits == 1], axis=-1).astype(np.float64)
    value = float(-np.sum(log_prob * one_hot))
    return value, softmax(logits, axis=-1) - one_hot


def _focal_terms(signed_logit: np.ndarray, sign: np.ndarray, alpha_t: np.ndarray, gamma: float):
    """Focal value and logit gradient from s * z, where p_t = sigmoid(s * z)."""
    p_t = np.clip(expit(signed_logit), PROB_CLAMP, 1.0 - PROB_CLAMP)
    log_p_t = np.maximum(log_expit(signed_logit), np.log(PROB_CLAMP))
    modulator = (1.0 - p_t) ** gamma
    value = -alpha_t * modulator * log_p_t
    grad = sign * (-alpha_t) * modulator * ((1.0 - p_t) - gamma * p_t * log_p_t)
    return value, grad


def focal_loss(p, is_positive, cfg: LossConfig | None = None):
    """
    Focal classification loss of a logistic anchor score.

    Args:
        p: Foreground probability sigmoid(logit), scalar or array
        is_positive: Whether each anchor is a positive
        cfg: Focal alpha and gamma

    Returns:
        (value, gradient with respect to the logit); summed for arrays

    Raises:
        DomainError: If a probability is NaN or outside [0, 1]
    """
    cfg = cfg or LossConfig()
    prob = np.asarray(p, dtype=np.float64)
    if np.any(np.isnan(prob)) or np.any(prob < 0.0) or np.any(prob > 1.0):
        raise DomainError(f"Probability outside [0, 1]: {p}")
    positive = np.broadcast_to(np.asarray(is_positive, dtype=bool), prob.shape)

    p_t = np.clip(np.where(positive, prob, 1.0 - prob), PROB_CLAMP, 1.0 - PROB_CLAMP)
    sign = np.where(positive, 1.0, -1.0)
    alpha_t = np.where(positive, cfg.focal_alpha, 1.0 - cfg.focal_alpha)
    # logit of the clamped p_t reproduces it exactly through the sigmoid
    value, grad = _focal_terms(np.log(p_t) - np.log1p(-p_t), sign, alpha_t, cfg.focal_gamma)
    if prob.ndim == 0:
        return float(value), float(grad)
    return float(np.sum(value)), grad


def focal_loss_from_logits(logits, is_positive, cfg: LossConfig | None = None):
    """Focal loss computed directly from logits; returns (sum, per-logit gradient)."""
    cfg = cfg or LossConfig()
    z = np.asarray(logits, dtype=np.float64)
    positive = np.asarray(is_positive, dtype=bool)
    sign = np.where(positive, 1.0, -1.0)
    alpha_t = np.where(positive, cfg.focal_alpha, 1.0 - cfg.focal_alpha)
    value, grad = _focal_terms(sign * z, sign, alpha_t, cfg.focal_gamma)
    return float(np.sum(value)), grad


class LossResult(NamedTuple):
    """Total loss, its gradients and the weighted-sum components before normalising."""

    value: float
    gradients: HeadOutput
    regression: float
    direction: float
    classification: float
    num_positive: int


def total_loss(
    head: HeadOutput, assignment: TargetAssignment, cfg: LossConfig | None = None
) -> LossResult:
    """
    Weighted detection loss over one frame.

    L = (beta_reg * L_reg + beta_dir * L_dir + beta_cls * L_cls) / max(N_pos, 1),
    with regression and direction summed over positives and classification
    over positives and negatives; ignored anchors contribute nothing.

    Args:
        head: Raw head outputs
        assignment: Anchor targets in the same flat order
        cfg: Loss weights and focal parameters

    Returns:
        LossResult whose ``gradients`` match the head output shapes
    """
    cfg = cfg or LossConfig()
    cls_logits, box_deltas, dir_logits = head.flat()
    cls_logits = cls_logits.astype(np.float64)
    box_deltas = box_deltas.astype(np.float64)
    dir_logits = dir_logits.astype(np.float64)
    if assignment.labels.shape != cls_logits.shape:
        raise DomainError(
            f"Assignment covers {assignment.labels.size} anchors, head has {cls_logits.size}"
        )

    positive = assignment.labels == POSITIVE
    counted = positive | (assignment.labels == NEGATIVE)
    num_positive = int(np.count_nonzero(positive))
    normalizer = float(max(num_positive, 1))

    grad_cls = np.zeros_like(cls_logits)
    grad_box = np.zeros_like(box_deltas)
    grad_dir = np.zeros_like(dir_logits)

    cls_value, cls_grad = focal_loss_from_logits(cls_logits[counted], positive[counted], cfg)
    grad_cls[counted] = cfg.beta_cls * cls_grad / normalizer

    reg_value = dir_value = 0.0
    if num_positive:
        reg_value, reg_grad = regression_loss(box_deltas[positive], assignment.box_targets[positive])
        grad_box[positive] = cfg.beta_reg * reg_grad / normalizer
        dir_value, dir_grad = direction_loss(dir_logits[positive], assignment.dir_targets[positive])
        grad_dir[positive] = cfg.beta_dir * dir_grad / normalizer

    weighted = cfg.beta_reg * reg_value + cfg.beta_dir * dir_value + cfg.beta_cls * cls_value
    value = weighted / normalizer
    gradients = HeadOutput.from_flat(grad_cls, grad_box, grad_dir, head.cls_logits.shape)
    return LossResult(
        value=float(value),
        gradients=gradients,
        regression=reg_value,
        direction=dir_value,
        classification=cls_value,
        num_positive=num_positive,
    )
