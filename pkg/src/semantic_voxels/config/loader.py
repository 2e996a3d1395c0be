# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Configuration loader for SemanticVoxels."""

import copy
import json
import logging
import os
from pathlib import Path
from typing import Any

from .models import DESK_DEFAULTS, KITTI_DEFAULTS, Config

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "SEMVOX_CONFIG"
PRESETS = {"kitti": KITTI_DEFAULTS, "desk": DESK_DEFAULTS}


def load_config(config_path: str | None = None, preset: str | None = None) -> Config:
    """
    Build the run configuration from a JSON file, a preset, or both.

    File values win over preset values section by section. With neither a
    path nor ``SEMVOX_CONFIG`` set, the preset alone is used ('kitti' unless
    another is named).

    Args:
        config_path: JSON file; falls back to the SEMVOX_CONFIG environment variable
        preset: 'kitti' or 'desk'

    Returns:
        Validated Config

    Raises:
        FileNotFoundError: If the file does not exist
        json.JSONDecodeError: If the file is not valid JSON
        pydantic.ValidationError: If a value is out of range
    """
    config_path = config_path or os.getenv(CONFIG_ENV_VAR)

    if config_path:
        config_data = _read_config_file(Path(config_path))
        if preset:
            config_data = _apply_preset(config_data, preset)
    else:
        preset = preset or "kitti"
        logger.info(f"No configuration file given, using '{preset}' preset")
        config_data = _apply_preset({}, preset)

    config = Config(**config_data)
    _log_config_summary(config)
    return config


def _read_config_file(config_file: Path) -> dict[str, Any]:
    if not config_file.is_file():
        raise FileNotFoundError(f"Configuration file not found: {config_file}")

    logger.info(f"Reading configuration {config_file}")
    try:
        return json.loads(config_file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        logger.error(f"{config_file} is not valid JSON: {e}")
        raise


def _apply_preset(config_data: dict[str, Any], preset: str) -> dict[str, Any]:
    """Layer ``config_data`` over a copy of the named preset; unknown names are ignored."""
    name = preset.lower()
    if name not in PRESETS:
        logger.warning(f"Unknown preset '{preset}', keeping the configuration as given")
        return config_data

    logger.debug(f"Layering configuration over the '{name}' preset")
    return _deep_merge(copy.deepcopy(PRESETS[name]), config_data)


def _deep_merge(default: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Recursive dict merge; nested dicts merge, everything else is replaced by ``override``."""
    merged = dict(default)
    for key, value in override.items():
        base = merged.get(key)
        if isinstance(base, dict) and isinstance(value, dict):
            merged[key] = _deep_merge(base, value)
        else:
            merged[key] = value
    return merged


def _log_config_summary(config: Config) -> None:
    """Log a one-line-per-section configuration summary."""
    grid = config.grid
    logger.debug(
        f"Grid: x={grid.x_range} y={grid.y_range} z={grid.z_range} "
        f"pillar={grid.pillar_size} -> {grid.nx}x{grid.ny} cells, {grid.nz} z-voxels"
    )
    logger.debug(f"Pillars: P={grid.max_pillars} N={grid.max_points_per_pillar}")
    logger.debug(
        f"Backbone: scheme={config.backbone.fusion_scheme} "
        f"depths={config.backbone.layer_nums} filters={config.backbone.num_filters}"
    )
    logger.debug(f"Anchors: {config.anchors.num_anchors} per cell at z={config.anchors.z_center}")
    logger.debug(f"Eval: {config.eval.num_recall_points}-point AP, logging at {config.logging.level}")


def validate_config(config: Config) -> None:
    """Warn about settings that are valid but likely unintended."""
    grid = config.grid
    backbone = config.backbone

    # Downsampled blocks are cropped back when the grid is not divisible
    total_stride = backbone.upsample_strides[-1]
    if grid.nx % total_stride or grid.ny % total_stride:
        logger.warning(
            f"Grid {grid.nx}x{grid.ny} is not divisible by the backbone stride "
            f"{total_stride}; upsampled maps will be cropped"
        )

    if grid.max_pillars < grid.nx * grid.ny * 0.01:
        logger.warning(
            f"max_pillars={grid.max_pillars} is below 1% of the {grid.nx * grid.ny} grid cells"
        )

    anchor_top = config.anchors.z_center + config.anchors.height / 2
    if anchor_top > grid.z_range[1]:
        logger.warning(
            f"Anchor top {anchor_top:.2f} m extends above the crop range {grid.z_range}"
        )

    if config.eval.score_threshold >= 0.5:
        logger.warning("score_threshold >= 0.5 removes most of the precision-recall curve")

    if backbone.fusion_scheme == "none":
        logger.info("Fusion scheme 'none': semantic features are ignored (pillar baseline)")

    logger.debug("Configuration checks done")


def create_sample_config(output_path: str, preset: str = "kitti") -> None:
    """
    Write the fully expanded configuration of a preset as JSON.

    Args:
        output_path: Destination file; parent directories are created
        preset: 'kitti' or 'desk'
    """
    config = Config(**_apply_preset({}, preset))
    sample_config = config.model_dump(mode="json")

    output_file = Path(output_path)
    output_file.parent.mkdir(parents=True, exist_ok=True)

    with open(output_file, "w", encoding="utf-8") as f:
        json.dump(sample_config, f, indent=2, ensure_ascii=False)

    logger.info(f"Wrote {preset} configuration to {output_file}")
