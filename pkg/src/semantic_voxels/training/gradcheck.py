# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Finite-difference verification of the analytic loss gradients."""

from collections.abc import Callable

import numpy as np
from pydantic import BaseModel, Field
from scipy.special import expit

from ..config.models import LossConfig
from ..core.logging import get_logger
from ..network.head import HeadOutput
from .losses import direction_loss, focal_loss, focal_loss_from_logits, regression_loss, total_loss
from .targets import IGNORED, NEGATIVE, POSITIVE, TargetAssignment

logger = get_logger(__name__)

STEP = 1e-4
ABS_TOL = 1e-7
REL_TOL = 1e-4
KINK_MARGIN = 1e-2
LOGIT_RANGE = 4.0
HEAD_GRID = (2, 3, 2)


class GradcheckReport(BaseModel):
    """Result of a gradient check run."""

    num_scenes: int
    num_checks: int = 0
    max_abs_error: float = 0.0
    max_rel_error: float = 0.0
    failures: list[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def numeric_gradient(
    func: Callable[[np.ndarray], float], x: np.ndarray, step: float = STEP
) -> np.ndarray:
    """Central differences of a scalar function at every element of ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        original = x[index]
        x[index] = original + step
        upper = func(x)
        x[index] = original - step
        lower = func(x)
        x[index] = original
        grad[index] = (upper - lower) / (2.0 * step)
    return grad


def _away_from_kinks(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Residual-like values with no component within KINK_MARGIN of |r| = 1."""
    values = rng.normal(scale=1.0, size=shape)
    bad = np.abs(np.abs(values) - 1.0) < KINK_MARGIN
    while np.any(bad):
        values[bad] = rng.normal(scale=1.0, size=int(np.count_nonzero(bad)))
        bad = np.abs(np.abs(values) - 1.0) < KINK_MARGIN
    return values


def _random_problem(rng: np.random.Generator) -> tuple[HeadOutput, TargetAssignment]:
    h, w, a = HEAD_GRID
    count = h * w * a
    labels = rng.choice([POSITIVE, NEGATIVE, IGNORED], size=count, p=[0.3, 0.5, 0.2])
    labels[rng.integers(count)] = POSITIVE

    box_deltas = rng.normal(scale=0.5, size=(count, 7))
    box_targets = box_deltas - _away_from_kinks(rng, (count, 7))
    head = HeadOutput.from_flat(
        rng.uniform(-LOGIT_RANGE, LOGIT_RANGE, size=count),
        box_deltas,
        rng.normal(size=(count, 2)),
        (h, w, a),
    )
    assignment = TargetAssignment(
        labels=labels,
        matched_gt=np.where(labels == POSITIVE, 0, -1),
        box_targets=box_targets,
        dir_targets=rng.integers(0, 2, size=count),
        num_gts=1,
    )
    return head, assignment


class _Tracker:
    def __init__(self, report: GradcheckReport):
        self.report = report

    def compare(self, name: str, analytic: np.ndarray, numeric: np.ndarray) -> None:
        analytic = np.asarray(analytic, dtype=np.float64)
        abs_err = np.abs(analytic - numeric)
        rel_err = abs_err / np.maximum(np.abs(numeric), np.finfo(np.float64).tiny)
        ok = (abs_err <= ABS_TOL) | (rel_err <= REL_TOL)
        report = self.report
        report.num_checks += int(abs_err.size)
        report.max_abs_error = max(report.max_abs_error, float(abs_err.max(initial=0.0)))
        significant = np.where(abs_err > ABS_TOL, rel_err, 0.0)
        report.max_rel_error = max(report.max_rel_error, float(significant.max(initial=0.0)))
        if not np.all(ok):
            worst = int(np.argmax(abs_err))
            report.failures.append(
                f"{name}: analytic {analytic.ravel()[worst]:.10g} "
                f"vs numeric {numeric.ravel()[worst]:.10g}"
            )


def run_gradcheck(
    seed: int = 0, num_scenes: int = 100, cfg: LossConfig | None = None
) -> GradcheckReport:
    """
    Compare every analytic loss gradient with central differences.

    Each trial draws a small random head output with its own targets, keeping
    logits in [-4, 4] and regression residuals away from the smooth L1 kink.

    Args:
        seed: Seed for the random trials
        num_scenes: Number of random trials
        cfg: Loss parameters

    Returns:
        GradcheckReport; ``passed`` when no element exceeded both tolerances
    """
    cfg = cfg or LossConfig()
    rng = np.random.default_rng(seed)
    report = GradcheckReport(num_scenes=num_scenes)
    tracker = _Tracker(report)

    for trial in range(num_scenes):
        head, assignment = _random_problem(rng)
        cls_logits, box_deltas, dir_logits = (a.astype(np.float64) for a in head.flat())
        positive = assignment.labels == POSITIVE
        shape = head.cls_logits.shape

        _, reg_grad = regression_loss(box_deltas[positive], assignment.box_targets[positive])
        targets = assignment.box_targets[positive]
        numeric = numeric_gradient(lambda x: regression_loss(x, targets)[0], box_deltas[positive])
        tracker.compare(f"trial {trial} regression", reg_grad, numeric)

        _, dir_grad = direction_loss(dir_logits, assignment.dir_targets)
        numeric = numeric_gradient(lambda x: direction_loss(x, assignment.dir_targets)[0], dir_logits)
        tracker.compare(f"trial {trial} direction", dir_grad, numeric)

        _, focal_grad = focal_loss_from_logits(cls_logits, positive, cfg)
        numeric = numeric_gradient(lambda x: focal_loss_from_logits(x, positive, cfg)[0], cls_logits)
        tracker.compare(f"trial {trial} focal", focal_grad, numeric)

        _, prob_grad = focal_loss(expit(cls_logits), positive, cfg)
        tracker.compare(f"trial {trial} focal (probability input)", prob_grad, numeric)

        result = total_loss(head, assignment, cfg)
        grad_cls, grad_box, grad_dir = result.gradients.flat()
        rebuild = HeadOutput.from_flat
        checks = (
            ("cls", grad_cls, cls_logits, lambda x: rebuild(x, box_deltas, dir_logits, shape)),
            ("box", grad_box, box_deltas, lambda x: rebuild(cls_logits, x, dir_logits, shape)),
            ("dir", grad_dir, dir_logits, lambda x: rebuild(cls_logits, box_deltas, x, shape)),
        )
        for name, analytic, values, build in checks:
            numeric = numeric_gradient(
                lambda x, build=build: total_loss(build(x), assignment, cfg).value, values
            )
            tracker.compare(f"trial {trial} total/{name}", analytic, numeric)

    logger.info(
        f"Gradient check: {report.num_checks} elements over {num_scenes} trials, "
        f"max abs error {report.max_abs_error:.3g}, {len(report.failures)} failures"
    )
    return report
