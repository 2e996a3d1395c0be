# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Exception hierarchy for SemanticVoxels."""


class SemanticVoxelsError(ValueError):
    """Base class for all pipeline errors."""


class InvalidScore(SemanticVoxelsError):
    """A segmentation score lies outside [0, 1]."""


class DimensionMismatch(SemanticVoxelsError):
    """Score map and calibration disagree on the image size."""


class DuplicateCoordinate(SemanticVoxelsError):
    """Two pillars were scattered to the same BEV cell."""


class ShapeMismatch(SemanticVoxelsError):
    """Array shapes do not match the network wiring."""


class DomainError(SemanticVoxelsError):
    """A probability lies outside its valid domain."""


class TruncatedFile(SemanticVoxelsError):
    """A binary file ends before its declared payload."""


class BadMagic(SemanticVoxelsError):
    """A binary file does not start with the expected magic bytes."""


class DimensionOverflow(SemanticVoxelsError):
    """Declared dimensions exceed the supported limits."""


class CheckpointError(SemanticVoxelsError):
    """A checkpoint is malformed or misses a required parameter."""


class ParseError(SemanticVoxelsError):
    """A text file could not be parsed."""

    def __init__(self, message: str, line_number: int | None = None, path: str | None = None):
        self.line_number = line_number
        self.path = path
        location = ""
        if path:
            location += f"{path}"
        if line_number is not None:
            location += f":{line_number}"
        super().__init__(f"{location}: {message}" if location else message)
