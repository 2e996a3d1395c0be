# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Logging configuration and utilities for SemanticVoxels."""

import logging
import sys

from ..config.models import LoggingConfig

ROOT_LOGGER = "semantic-voxels"


def setup_logging(config: LoggingConfig) -> None:
    """
    Attach stderr (and optionally file) handlers to the package logger.

    Calling it again replaces the previous handlers, so the CLI can reconfigure
    after ``--log-level`` is parsed.

    Args:
        config: Logging configuration
    """
    level = getattr(logging, config.level)
    logger = logging.getLogger(ROOT_LOGGER)
    logger.setLevel(level)
    logger.handlers.clear()

    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    file_error: OSError | None = None
    if config.file:
        try:
            handlers.append(logging.FileHandler(config.file, encoding="utf-8"))
        except OSError as e:
            file_error = e

    formatter = logging.Formatter(config.format)
    for handler in handlers:
        handler.setLevel(level)
        handler.setFormatter(formatter)
        logger.addHandler(handler)

    if file_error is not None:
        logger.warning(f"Cannot open log file {config.file}: {file_error}")
    elif config.file:
        logger.info(f"Log file: {config.file}")
    logger.info(f"Logging at {config.level} to {len(handlers)} handler(s)")


def get_logger(name: str) -> logging.Logger:
    """Logger under the package root, e.g. ``semantic-voxels.encoders.pillars``."""
    return logging.getLogger(f"{ROOT_LOGGER}.{name}")


def log_pipeline_stage(
    stage: str,
    frame_id: str,
    success: bool,
    details: str | None = None,
    elapsed: float | None = None,
) -> None:
    """
    Log one pipeline stage for a frame.

    Args:
        stage: Stage name (e.g., 'paint', 'encode', 'forward')
        frame_id: Frame the stage ran on
        success: Whether the stage succeeded
        details: Additional details or error message
        elapsed: Wall time of the stage in seconds
    """
    logger = get_logger("stages")

    status = "SUCCESS" if success else "FAILURE"
    log_msg = f"STAGE {stage.upper()}: {status} - Frame: {frame_id}"

    if elapsed is not None:
        log_msg += f" - {elapsed * 1000:.1f} ms"
    if details:
        log_msg += f" - Details: {details}"

    if success:
        logger.info(log_msg)
    else:
        logger.warning(log_msg)
