# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Precision-recall curve charts for evaluation reports."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")  # Use non-interactive backend
import matplotlib.pyplot as plt  # noqa: E402

from ..core.logging import get_logger  # noqa: E402
from .kitti_eval import EVAL_LEVELS, EvalReport  # noqa: E402

logger = get_logger(__name__)

LEVEL_COLORS = {"easy": "#2E86AB", "moderate": "#F18F01", "hard": "#C73E1D"}


def plot_pr_curves(report: EvalReport, path: str | Path, title: str = "Pedestrian") -> Path:
    """
    Draw one panel per metric with a precision-recall curve per difficulty.

    Args:
        report: Evaluation report
        path: PNG output path
        title: Chart title prefix

    Returns:
        Path the chart was written to
    """
    path = Path(path)
    metrics = list(report.results)
    fig, axes = plt.subplots(1, len(metrics), figsize=(6 * len(metrics), 5), squeeze=False)

    for ax, metric in zip(axes[0], metrics):
        for level in EVAL_LEVELS:
            result = report.results[metric][level.value]
            label = f"{level.value} (AP {result.ap:.2f})"
            color = LEVEL_COLORS[level.value]
            if result.recall.size:
                ax.step(result.recall, result.precision, where="post", color=color, label=label)
            else:
                ax.plot([], [], color=color, label=label)
        ax.set_title(f"{title} AP_{metric.upper()}", fontsize=14, fontweight="bold")
        ax.set_xlabel("Recall", fontsize=12)
        ax.set_ylabel("Precision", fontsize=12)
        ax.set_xlim(0.0, 1.0)
        ax.set_ylim(0.0, 1.05)
        ax.grid(alpha=0.3)
        ax.legend(loc="lower left")

    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    logger.info(f"Saved PR curves to {path}")
    return path
