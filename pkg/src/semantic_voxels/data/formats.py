# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Binary formats: score maps (SVSM), painted clouds (SVPC) and named tensors (SVCK).

All integers are little-endian u32 and all payloads row-major little-endian
float32. Every writer goes through a temporary file and an atomic rename.

SVSM   "SVSM" | version | width | height | classes | H x W x classes floats
SVPC   "SVPC" | version | count | count x 8 floats
SVCK   "SVCK" | version | blocks | per block: name_len | name | ndim | dims | floats
"""

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from ..config.models import Config
from ..core.errors import BadMagic, CheckpointError, DimensionOverflow, TruncatedFile
from ..core.logging import get_logger
from ..encoders.painting import NUM_CLASSES, PaintedPointCloud, SegScoreMap
from ..network.weights import NetworkWeights, infer_scheme

logger = get_logger(__name__)

FORMAT_VERSION = 1
SCOREMAP_MAGIC = b"SVSM"
PAINTED_MAGIC = b"SVPC"
TENSORS_MAGIC = b"SVCK"

MAX_IMAGE_SIDE = 1 << 16
MAX_TENSOR_ELEMENTS = 1 << 28
MAX_TENSOR_NDIM = 8
MAX_NAME_LENGTH = 1024

_U32 = struct.Struct("<I")
FLOAT_LE = np.dtype("<f4")


def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    """Write a file via a temporary sibling and os.replace."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, target)
    except Exception:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


class _Reader:
    """Cursor over a byte buffer that raises TruncatedFile on short reads."""

    def __init__(self, data: bytes, source: str):
        self.data = data
        self.offset = 0
        self.source = source

    def take(self, count: int) -> bytes:
        if count < 0 or self.offset + count > len(self.data):
            raise TruncatedFile(
                f"{self.source}: needs {count} bytes at offset {self.offset}, "
                f"file has {len(self.data)}"
            )
        chunk = self.data[self.offset : self.offset + count]
        self.offset += count
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(count * 4), dtype=FLOAT_LE).astype(np.float32)

    def expect_magic(self, magic: bytes) -> None:
        if len(self.data) < len(magic):
            raise TruncatedFile(f"{self.source}: file shorter than its magic")
        found = self.take(len(magic))
        if found != magic:
            raise BadMagic(f"{self.source}: expected magic {magic!r}, found {found!r}")
        version = self.u32()
        if version != FORMAT_VERSION:
            raise BadMagic(f"{self.source}: unsupported format version {version}")

    def finish(self) -> None:
        if self.offset != len(self.data):
            raise TruncatedFile(
                f"{self.source}: {len(self.data) - self.offset} trailing bytes after payload"
            )


def encode_scoremap(seg: SegScoreMap) -> bytes:
    header = SCOREMAP_MAGIC + struct.pack("<IIII", FORMAT_VERSION, seg.width, seg.height, NUM_CLASSES)
    return header + seg.scores.astype(FLOAT_LE).tobytes()


def write_scoremap(seg: SegScoreMap, path: str | Path) -> None:
    """Write a score map in SVSM format."""
    atomic_write_bytes(path, encode_scoremap(seg))
    logger.debug(f"Wrote {seg.width}x{seg.height} score map to {path}")


def read_scoremap(path: str | Path) -> SegScoreMap:
    """
    Read an SVSM score map.

    Raises:
        BadMagic: On a foreign file or unknown version
        DimensionOverflow: On implausible dimensions or a class count other than 4
        TruncatedFile: If the payload is short or followed by extra bytes
    """
    reader = _Reader(Path(path).read_bytes(), str(path))
    reader.expect_magic(SCOREMAP_MAGIC)
    width, height, classes = reader.u32(), reader.u32(), reader.u32()
    if classes != NUM_CLASSES:
        raise DimensionOverflow(f"{path}: score map declares {classes} classes, expected 4")
    if not (0 < width <= MAX_IMAGE_SIDE and 0 < height <= MAX_IMAGE_SIDE):
        raise DimensionOverflow(f"{path}: score map size {width}x{height} is out of range")
    scores = reader.floats(width * height * classes).reshape(height, width, classes)
    reader.finish()
    return SegScoreMap(scores=scores)


def write_painted(cloud: PaintedPointCloud, path: str | Path) -> None:
    """Write a painted cloud in SVPC format."""
    header = PAINTED_MAGIC + struct.pack("<II", FORMAT_VERSION, len(cloud))
    atomic_write_bytes(path, header + cloud.points.astype(FLOAT_LE).tobytes())


def read_painted(path: str | Path) -> PaintedPointCloud:
    """Read an SVPC painted cloud."""
    reader = _Reader(Path(path).read_bytes(), str(path))
    reader.expect_magic(PAINTED_MAGIC)
    count = reader.u32()
    if count * 8 > MAX_TENSOR_ELEMENTS:
        raise DimensionOverflow(f"{path}: {count} painted points exceed the supported size")
    points = reader.floats(count * 8).reshape(count, 8)
    reader.finish()
    return PaintedPointCloud(points=points)


def encode_named_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    parts = [TENSORS_MAGIC, struct.pack("<II", FORMAT_VERSION, len(arrays))]
    for name, value in arrays.items():
        encoded = name.encode("utf-8")
        arr = np.asarray(value, dtype=FLOAT_LE)
        parts.append(_U32.pack(len(encoded)))
        parts.append(encoded)
        parts.append(_U32.pack(arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def write_named_arrays(arrays: dict[str, np.ndarray], path: str | Path) -> None:
    """Write named float32 tensors in SVCK format, in dict order."""
    atomic_write_bytes(path, encode_named_arrays(arrays))


def read_named_arrays(path: str | Path) -> dict[str, np.ndarray]:
    """
    Read SVCK named tensors.

    Raises:
        CheckpointError: On duplicate or undecodable names
        DimensionOverflow: On implausible ranks or sizes
    """
    reader = _Reader(Path(path).read_bytes(), str(path))
    reader.expect_magic(TENSORS_MAGIC)
    arrays: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name_length = reader.u32()
        if name_length > MAX_NAME_LENGTH:
            raise DimensionOverflow(f"{path}: tensor name of {name_length} bytes")
        try:
            name = reader.take(name_length).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"{path}: tensor name is not UTF-8: {e}") from e
        if name in arrays:
            raise CheckpointError(f"{path}: duplicate tensor {name}")
        ndim = reader.u32()
        if ndim > MAX_TENSOR_NDIM:
            raise DimensionOverflow(f"{path}: tensor {name} has rank {ndim}")
        shape = tuple(reader.u32() for _ in range(ndim))
        size = int(np.prod(shape, dtype=np.int64))
        if size > MAX_TENSOR_ELEMENTS:
            raise DimensionOverflow(f"{path}: tensor {name} has {size} elements")
        arrays[name] = reader.floats(size).reshape(shape)
    reader.finish()
    return arrays


def write_checkpoint(weights: NetworkWeights, path: str | Path) -> None:
    """Store network parameters, including batch-norm statistics."""
    write_named_arrays(weights.tensors, path)
    logger.info(f"Wrote {len(weights.tensors)} parameters ({weights.scheme} scheme) to {path}")


def read_checkpoint(path: str | Path, config: Config) -> NetworkWeights:
    """
    Load parameters and identify their fusion scheme from the stored shapes.

    Raises:
        CheckpointError: If the tensors do not fit any scheme of ``config``
    """
    tensors = read_named_arrays(path)
    scheme = infer_scheme(tensors, config)
    weights = NetworkWeights(scheme=scheme, tensors=tensors)
    weights.check(config)
    logger.info(f"Loaded {len(tensors)} parameters ({scheme} scheme) from {path}")
    return weights
