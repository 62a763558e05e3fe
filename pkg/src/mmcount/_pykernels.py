"""Pure-numpy raster kernels (fallback for ``_ckernels``)."""
import numpy as np


def stamp_kernels(out, kernel, rows, cols):
    """Add one unit-mass kernel per (row, col) centre into ``out`` in place.

    Kernels clipped by the border are rescaled so the in-bounds part sums to 1.
    """
    h, w = out.shape
    side = kernel.shape[0]
    r = side // 2
    for row, col in zip(rows.tolist(), cols.tolist()):
        r0, c0 = row - r, col - r
        r1, c1 = r0 + side, c0 + side
        kr0, kc0 = max(0, -r0), max(0, -c0)
        r0, c0, r1, c1 = max(r0, 0), max(c0, 0), min(r1, h), min(c1, w)
        piece = kernel[kr0:kr0 + (r1 - r0), kc0:kc0 + (c1 - c0)]
        total = piece.sum()
        if total <= 0.0:
            continue
        out[r0:r1, c0:c1] += piece * (1.0 / total)


def block_sum(grid, factor):
    h, w = grid.shape
    return grid.reshape(h // factor, factor, w // factor, factor).sum(axis=(1, 3))


def patch_sums(grid, row_bounds, col_bounds):
    rows = np.add.reduceat(grid, row_bounds[:-1], axis=0)
    return np.add.reduceat(rows, col_bounds[:-1], axis=1)
