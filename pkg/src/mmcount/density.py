"""Dot maps and fixed-sigma Gaussian density targets from head annotations."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .core import Grid2D, PointSet, sum_pool, write_grid
from .errors import DimensionError, ParameterError

# fixed sigma per dataset used for ground-truth generation
DATASET_SIGMA = {"dronergbt": 7.0, "carpk": 10.0, "shanghaitech_b": 15.0}


@dataclass(frozen=True)
class KernelSpec:
    sigma: float
    radius: Optional[int] = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if self.radius is None:
            object.__setattr__(self, "radius", max(1, math.ceil(3 * self.sigma)))
        if int(self.radius) != self.radius or self.radius < 1:
            raise ParameterError(f"radius must be a positive integer, got {self.radius}")
        object.__setattr__(self, "radius", int(self.radius))

    @property
    def side(self) -> int:
        return 2 * self.radius + 1


def gaussian_kernel(spec: KernelSpec) -> Grid2D:
    r = spec.radius
    offsets = np.arange(-r, r + 1, dtype=np.float64)
    sq = offsets[:, None] ** 2 + offsets[None, :] ** 2
    kernel = np.exp(-sq / (2.0 * spec.sigma ** 2))
    return Grid2D(kernel / kernel.sum())


def dot_map(points: PointSet, height: int, width: int) -> Grid2D:
    points.validate(height, width)
    grid = np.zeros((height, width), dtype=np.float64)
    rows, cols = points.raster_indices()
    np.add.at(grid, (rows, cols), 1.0)
    return Grid2D(grid)


def density_map(points: PointSet, height: int, width: int, spec: KernelSpec) -> Grid2D:
    """Stamp one unit-mass Gaussian per head.

    Kernels cut by the image border are renormalized over their in-bounds
    part, so every head contributes exactly 1 to the total.
    """
    points.validate(height, width)
    out = np.zeros((height, width), dtype=np.float64)
    if len(points):
        kernel = np.ascontiguousarray(gaussian_kernel(spec).values)
        rows, cols = points.raster_indices()
        kernels.stamp_kernels(out, kernel, rows, cols)
    return Grid2D(out)


def target_at_scale(points: PointSet, height: int, width: int, spec: KernelSpec,
                    factor: int) -> Grid2D:
    """Density target at the network's output resolution (sum-pooled by ``factor``)."""
    if int(factor) != factor or factor < 1:
        raise ParameterError(f"factor must be a positive integer, got {factor}")
    if height % factor:
        raise DimensionError(f"height {height} is not divisible by factor {factor}")
    if width % factor:
        raise DimensionError(f"width {width} is not divisible by factor {factor}")
    return sum_pool(density_map(points, height, width, spec), factor)


def save_target(grid: Grid2D, out_dir, sample_id: str, spec: KernelSpec, factor: int) -> Path:
    """Write ``<sample_id>.fgrd`` plus a JSON sidecar with the generation settings."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{sample_id}.fgrd"
    write_grid(grid, path)
    sidecar = {**asdict(spec), "factor": int(factor)}
    (out_dir / f"{sample_id}.json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")
    return path
