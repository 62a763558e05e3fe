# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled raster kernels. Semantics mirror ``_pykernels`` exactly."""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def stamp_kernels(double[:, ::1] out, const double[:, ::1] kernel,
                  const cnp.int64_t[::1] rows, const cnp.int64_t[::1] cols):
    cdef Py_ssize_t h = out.shape[0], w = out.shape[1]
    cdef Py_ssize_t side = kernel.shape[0], r = side // 2
    cdef Py_ssize_t n = rows.shape[0]
    cdef Py_ssize_t p, i, j, r0, r1, c0, c1
    cdef double total, scale
    for p in range(n):
        r0 = rows[p] - r
        c0 = cols[p] - r
        r1 = r0 + side
        c1 = c0 + side
        if r0 < 0:
            r0 = 0
        if c0 < 0:
            c0 = 0
        if r1 > h:
            r1 = h
        if c1 > w:
            c1 = w
        total = 0.0
        for i in range(r0, r1):
            for j in range(c0, c1):
                total += kernel[i - rows[p] + r, j - cols[p] + r]
        if total <= 0.0:
            continue
        scale = 1.0 / total
        for i in range(r0, r1):
            for j in range(c0, c1):
                out[i, j] += kernel[i - rows[p] + r, j - cols[p] + r] * scale


def block_sum(const double[:, ::1] grid, Py_ssize_t factor):
    cdef Py_ssize_t h = grid.shape[0] // factor, w = grid.shape[1] // factor
    result = np.zeros((h, w), dtype=np.float64)
    cdef double[:, ::1] res = result
    cdef Py_ssize_t i, j
    for i in range(grid.shape[0]):
        for j in range(grid.shape[1]):
            res[i // factor, j // factor] += grid[i, j]
    return result


def patch_sums(const double[:, ::1] grid, const cnp.int64_t[::1] row_bounds,
               const cnp.int64_t[::1] col_bounds):
    cdef Py_ssize_t nr = row_bounds.shape[0] - 1, nc = col_bounds.shape[0] - 1
    result = np.zeros((nr, nc), dtype=np.float64)
    cdef double[:, ::1] res = result
    cdef Py_ssize_t a, b, i, j
    cdef double acc
    for a in range(nr):
        for b in range(nc):
            acc = 0.0
            for i in range(row_bounds[a], row_bounds[a + 1]):
                for j in range(col_bounds[b], col_bounds[b + 1]):
                    acc += grid[i, j]
            res[a, b] = acc
    return result
