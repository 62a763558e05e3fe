"""Shared raster/annotation types, the FGRD grid format and count-preserving utilities."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from . import kernels
from .errors import AnnotationError, DimensionError, FormatError, ParameterError

FGRD_MAGIC = b"FGRD"
_HEADER = struct.Struct("<4sHH")

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
SPLITS = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class Grid2D:
    """A finite 2-D float raster (density maps, dot maps, kernels)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DimensionError(f"grid must be 2-D with positive dims, got shape {values.shape}")
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float64)
        if not np.all(np.isfinite(values)):
            raise ParameterError("grid values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def sum(self) -> float:
        return float(self.values.sum(dtype=np.float64))

    def is_density(self) -> bool:
        return bool(np.all(self.values >= 0))

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Float image in [0, 1], stored as (height, width, channels)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float32)
        if values.ndim == 2:
            values = values[:, :, None]
        if values.ndim != 3 or values.shape[2] not in (1, 3):
            raise DimensionError(f"image must be HxWx1 or HxWx3, got shape {values.shape}")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ParameterError("image values must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def to_chw(self) -> np.ndarray:
        return np.ascontiguousarray(self.values.transpose(2, 0, 1))


@dataclass(frozen=True, eq=False)
class PointSet:
    """Head positions as (x=column, y=row) floats, origin top-left."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise AnnotationError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    def __iter__(self):
        return iter(map(tuple, self.points.tolist()))

    def union(self, other: "PointSet") -> "PointSet":
        return PointSet(np.concatenate([self.points, other.points]))

    def validate(self, height: int, width: int) -> None:
        """Raise AnnotationError for the first point outside the image."""
        for i, (x, y) in enumerate(self.points.tolist()):
            if not (0 <= x < width and 0 <= y < height):
                raise AnnotationError(
                    f"point {i} at (x={x}, y={y}) outside image of {height}x{width} (HxW)"
                )

    def raster_indices(self):
        """Floor-rasterized (rows, cols) as int64 arrays."""
        rows = np.floor(self.points[:, 1]).astype(np.int64)
        cols = np.floor(self.points[:, 0]).astype(np.int64)
        return np.ascontiguousarray(rows), np.ascontiguousarray(cols)


@dataclass(frozen=True)
class SampleRecord:
    id: str
    rgb_path: Path
    tir_path: Optional[Path]
    points: PointSet
    split: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ParameterError(f"split must be one of {SPLITS}, got {self.split!r}")


def as_array(grid) -> np.ndarray:
    return grid.values if isinstance(grid, Grid2D) else np.asarray(grid)


def write_grid(grid, path) -> None:
    values = as_array(grid)
    h, w = values.shape
    if h > 0xFFFF or w > 0xFFFF:
        raise DimensionError(f"FGRD dims are limited to 65535, got {h}x{w}")
    payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(FGRD_MAGIC, w, h))
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write grid to {path}: {exc}") from exc


def read_grid(path) -> Grid2D:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the 8-byte FGRD header")
    magic, w, h = _HEADER.unpack_from(data)
    if magic != FGRD_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {FGRD_MAGIC!r}")
    expected = h * w * 4
    if len(data) - _HEADER.size < expected:
        raise FormatError(
            f"{path}: payload has {len(data) - _HEADER.size} bytes, expected {expected}"
        )
    values = np.frombuffer(data, dtype="<f4", count=h * w, offset=_HEADER.size)
    return Grid2D(values.reshape(h, w).astype(np.float32))


def sum_pool(grid, factor: int) -> Grid2D:
    """Sum non-overlapping factor x factor blocks; total mass is preserved."""
    if int(factor) != factor or factor < 1:
        raise ParameterError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    values = np.ascontiguousarray(as_array(grid), dtype=np.float64)
    h, w = values.shape
    if h % factor:
        raise DimensionError(f"height {h} is not divisible by factor {factor}")
    if w % factor:
        raise DimensionError(f"width {w} is not divisible by factor {factor}")
    if factor == 1:
        return Grid2D(values.copy())
    return Grid2D(kernels.block_sum(values, factor))


def to_grayscale(image: ImageBuffer) -> ImageBuffer:
    """BT.601 luma; 1-channel images are returned unchanged."""
    if image.channels == 1:
        return image
    weights = np.asarray(LUMA_WEIGHTS, dtype=np.float64)
    gray = image.values.astype(np.float64) @ weights
    return ImageBuffer(np.clip(gray, 0.0, 1.0).astype(np.float32))


def load_image(path, channels: Optional[int] = None) -> ImageBuffer:
    """Read an 8-bit PNG into [0,1]. ``channels=1`` forces grayscale via BT.601 luma."""
    with Image.open(path) as im:
        if im.mode in ("L", "I", "I;16", "F"):
            arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    img = ImageBuffer(arr)
    if channels == 1:
        return to_grayscale(img)
    if channels == 3 and img.channels == 1:
        return ImageBuffer(np.repeat(img.values, 3, axis=2))
    return img


def save_image(image: ImageBuffer, path) -> None:
    arr = np.rint(np.clip(image.values, 0.0, 1.0) * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        Image.fromarray(arr[:, :, 0]).save(path, format="PNG")
    else:
        Image.fromarray(arr).save(path, format="PNG")


def image_size(path):
    """(height, width) from the image header without decoding pixels."""
    with Image.open(path) as im:
        w, h = im.size
    return h, w
