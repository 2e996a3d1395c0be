# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Head-only overfitting on one scene with frozen encoders and backbone."""

from pydantic import BaseModel, ConfigDict, Field

from ..core.logging import get_logger
from ..core.types import FeatureMap
from ..data.scene import SceneBundle
from ..data.synth import SynthSceneSpec
from ..evaluation.kitti_eval import evaluate
from ..network.head import HeadParams, head_backward, head_forward
from ..pipeline import Detector
from .losses import total_loss
from .targets import TargetAssignment, assign_targets

logger = get_logger(__name__)

MIN_REDUCTION = 10.0
MAX_BACKTRACKS = 40
STEP_GROWTH = 2.0


class OverfitReport(BaseModel):
    """Outcome of a head overfitting run."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    steps: int
    initial_loss: float
    final_loss: float
    loss_history: list[float] = Field(default_factory=list)
    ap_bev: dict[str, float] = Field(default_factory=dict)
    head: HeadParams | None = None

    @property
    def reduction(self) -> float:
        if self.final_loss <= 0.0:
            return float("inf")
        return self.initial_loss / self.final_loss

    @property
    def passed(self) -> bool:
        """Loss fell at least tenfold and every populated difficulty reaches 100 AP_BEV."""
        reached = bool(self.ap_bev) and all(ap == 100.0 for ap in self.ap_bev.values())
        return self.reduction >= MIN_REDUCTION and reached


def overfit_scene_spec(seed: int = 0) -> SynthSceneSpec:
    """One pedestrian close to the sensor with no distractors or ground returns."""
    return SynthSceneSpec(
        seed=seed,
        num_pedestrians=1,
        num_poles=0,
        num_clutter=0,
        ground_points=0,
        x_range=(8.0, 14.0),
        y_range=(-3.0, 3.0),
    )


def _loss(features: FeatureMap, params: HeadParams, assignment: TargetAssignment, detector: Detector):
    return total_loss(head_forward(features, params), assignment, detector.config.loss)


def overfit_head(
    detector: Detector, scene: SceneBundle, steps: int = 500, step_size: float = 1.0
) -> OverfitReport:
    """
    Plain gradient descent on the 1x1 head parameters with a backtracking step.

    A step is accepted only if it lowers the loss; otherwise the step size is
    halved and the step retried. After an accepted step the step size doubles.

    Args:
        detector: Detector whose encoder and backbone stay frozen
        scene: Labelled scene to fit
        steps: Gradient steps
        step_size: Initial step size

    Returns:
        OverfitReport with the loss trajectory and post-training AP_BEV
    """
    features = detector.features(scene)
    gts = [label.box for label in scene.pedestrians()]
    assignment = assign_targets(detector.anchors, gts, detector.config.loss)
    logger.info(
        f"Overfitting head on frame {scene.frame_id}: {assignment.num_positive} positive anchors"
    )

    params = detector.head
    current = _loss(features, params, assignment, detector)
    history = [current.value]
    lr = step_size

    for step in range(steps):
        grads = head_backward(features, current.gradients)
        for _ in range(MAX_BACKTRACKS):
            candidate = params.axpy(-lr, grads)
            trial = _loss(features, candidate, assignment, detector)
            if trial.value < current.value:
                params, current = candidate, trial
                lr *= STEP_GROWTH
                break
            lr /= 2.0
        else:
            logger.info(f"Step size collapsed at step {step}; stopping early")
            break
        history.append(current.value)

    detections = detector.decode(head_forward(features, params))
    report = evaluate([detections], [scene.labels or []], detector.config.eval)
    ap_bev = {level: result.ap for level, result in report.results["bev"].items() if result.num_gt}

    result = OverfitReport(
        steps=len(history) - 1,
        initial_loss=history[0],
        final_loss=history[-1],
        loss_history=history,
        ap_bev=ap_bev,
        head=params,
    )
    logger.info(
        f"Overfit: loss {result.initial_loss:.4f} -> {result.final_loss:.6f} "
        f"({result.reduction:.1f}x), AP_BEV {ap_bev}"
    )
    return result
