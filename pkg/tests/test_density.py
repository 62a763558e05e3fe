import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmcount.core import PointSet, read_grid
from mmcount.density import (DATASET_SIGMA, KernelSpec, density_map, dot_map, gaussian_kernel,
                             save_target, target_at_scale)
from mmcount.errors import AnnotationError, DimensionError, ParameterError


def brute_force_density(points, h, w, sigma, radius):
    """Independent oracle: evaluate each clipped Gaussian pixel by pixel."""
    out = np.zeros((h, w))
    for x, y in points:
        r0, c0 = math.floor(y), math.floor(x)
        cells = []
        for i in range(r0 - radius, r0 + radius + 1):
            for j in range(c0 - radius, c0 + radius + 1):
                if 0 <= i < h and 0 <= j < w:
                    cells.append((i, j, math.exp(-((i - r0) ** 2 + (j - c0) ** 2) / (2 * sigma ** 2))))
        total = sum(v for _, _, v in cells)
        for i, j, v in cells:
            out[i, j] += v / total
    return out


def test_kernel_spec_defaults():
    assert KernelSpec(1.0).radius == 3
    assert KernelSpec(7.0).radius == 21
    assert KernelSpec(2.5).radius == 8
    with pytest.raises(ParameterError):
        KernelSpec(0.0)
    with pytest.raises(ParameterError):
        KernelSpec(-1.0)
    with pytest.raises(ParameterError):
        KernelSpec(1.0, radius=0)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0, 7.0, 10.0, 15.0])
def test_kernel_sums_to_one(sigma):
    assert abs(gaussian_kernel(KernelSpec(sigma)).sum() - 1.0) <= 1e-9


def test_kernel_symmetry_sigma1_r3():
    k = gaussian_kernel(KernelSpec(1.0, 3)).values
    assert k.shape == (7, 7)
    assert k[3, 3] == k.max()
    np.testing.assert_allclose(k, k.T, rtol=0, atol=1e-17)
    np.testing.assert_allclose(k, k[::-1, :], rtol=0, atol=1e-17)
    np.testing.assert_allclose(k, k[:, ::-1], rtol=0, atol=1e-17)


def test_kernel_dronergbt_sigma():
    assert DATASET_SIGMA == {"dronergbt": 7.0, "carpk": 10.0, "shanghaitech_b": 15.0}
    k = gaussian_kernel(KernelSpec(DATASET_SIGMA["dronergbt"]))
    assert k.shape == (43, 43)
    assert k.is_density()


def test_kernel_entries_follow_gaussian():
    sigma, r = 1.7, 4
    k = gaussian_kernel(KernelSpec(sigma, r)).values
    ratio = k[r, r + 2] / k[r, r]
    assert ratio == pytest.approx(math.exp(-4 / (2 * sigma ** 2)), rel=1e-12)


def test_dot_map_single_point():
    d = dot_map(PointSet([[3.0, 4.0]]), 10, 10)
    assert d.values[4, 3] == 1.0
    assert d.sum() == 1.0


def test_dot_map_empty():
    d = dot_map(PointSet(), 5, 6)
    assert d.shape == (5, 6) and d.sum() == 0.0


def test_dot_map_duplicates_accumulate():
    d = dot_map(PointSet([[2.2, 1.7], [2.9, 1.1]]), 4, 4)
    assert d.values[1, 2] == 2.0
    # oracle: summing the dot map counts every annotation
    assert d.values.sum() == 2.0


def test_dot_map_out_of_bounds_names_index():
    with pytest.raises(AnnotationError, match="point 1"):
        dot_map(PointSet([[0, 0], [10, 3]]), 10, 10)


def test_density_center_sigma7(backend):
    d = density_map(PointSet([[320.0, 256.0]]), 512, 640, KernelSpec(7.0))
    assert abs(d.sum() - 1.0) <= 1e-4


def test_density_corner_renormalized(backend):
    d = density_map(PointSet([[0.0, 0.0]]), 512, 640, KernelSpec(7.0))
    assert abs(d.sum() - 1.0) <= 1e-4
    assert d.values[0, 0] == d.values.max()


def test_density_three_points_sigma2(backend):
    d = density_map(PointSet([[10, 10], [20.5, 15.2], [30, 5]]), 40, 40, KernelSpec(2.0))
    assert abs(d.sum() - 3.0) <= 1e-4


def test_density_matches_brute_force(backend, rng):
    h, w, sigma = 23, 31, 1.6
    pts = np.column_stack([rng.uniform(0, w, 12), rng.uniform(0, h, 12)])
    pts[0] = [0.0, 0.0]
    pts[1] = [w - 0.01, h - 0.01]
    spec = KernelSpec(sigma)
    got = density_map(PointSet(pts), h, w, spec).values
    np.testing.assert_allclose(got, brute_force_density(pts, h, w, sigma, spec.radius),
                               rtol=1e-10, atol=1e-14)


def test_density_linearity(backend, rng):
    h, w = 30, 40
    p1 = PointSet(np.column_stack([rng.uniform(0, w, 7), rng.uniform(0, h, 7)]))
    p2 = PointSet(np.column_stack([rng.uniform(0, w, 5), rng.uniform(0, h, 5)]))
    spec = KernelSpec(3.0)
    both = density_map(p1.union(p2), h, w, spec).values
    parts = density_map(p1, h, w, spec).values + density_map(p2, h, w, spec).values
    np.testing.assert_allclose(both, parts, rtol=0, atol=1e-9)


def test_density_translation_covariance(backend):
    spec = KernelSpec(2.0)
    a = density_map(PointSet([[20.3, 15.8]]), 40, 50, spec).values
    b = density_map(PointSet([[23.3, 13.8]]), 40, 50, spec).values
    np.testing.assert_array_equal(np.roll(np.roll(a, -2, axis=0), 3, axis=1), b)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 40), st.sampled_from([1.0, 2.0, 7.0]), st.integers(0, 2**32 - 1))
def test_density_mass_conservation_property(n, sigma, seed):
    r = np.random.default_rng(seed)
    h, w = int(r.integers(8, 80)), int(r.integers(8, 80))
    pts = np.column_stack([r.uniform(0, w, n), r.uniform(0, h, n)])
    d = density_map(PointSet(pts), h, w, KernelSpec(sigma))
    assert abs(d.sum() - n) <= 1e-4 * max(1, n)
    assert d.is_density()


def test_target_at_scale_identity(backend):
    pts = PointSet([[5, 5], [12.5, 3.3]])
    spec = KernelSpec(2.0)
    np.testing.assert_array_equal(target_at_scale(pts, 16, 20, spec, 1).values,
                                  density_map(pts, 16, 20, spec).values)


def test_target_at_scale_one_point_128(backend):
    t = target_at_scale(PointSet([[64.0, 64.0]]), 128, 128, KernelSpec(3.0), 4)
    assert t.shape == (32, 32)
    assert abs(t.sum() - 1.0) <= 1e-4


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("factor", [1, 2, 4, 8])
def test_target_at_scale_25_points(backend, seed, factor):
    r = np.random.default_rng(seed)
    h, w = 64, 96
    pts = PointSet(np.column_stack([r.uniform(0, w, 25), r.uniform(0, h, 25)]))
    t = target_at_scale(pts, h, w, KernelSpec(3.0), factor)
    # oracle: direct summation of the full-resolution map
    full = density_map(pts, h, w, KernelSpec(3.0)).values
    assert abs(t.sum() - 25) <= 2.5e-3
    assert abs(float(np.sum(t.values)) - float(np.sum(full))) <= 1e-9


def test_target_at_scale_non_divisible():
    with pytest.raises(DimensionError):
        target_at_scale(PointSet(), 30, 32, KernelSpec(1.0), 4)


def test_save_target_writes_sidecar(tmp_path):
    spec = KernelSpec(2.0)
    t = target_at_scale(PointSet([[4, 4]]), 16, 16, spec, 4)
    path = save_target(t, tmp_path, "abc", spec, 4)
    assert path.name == "abc.fgrd"
    np.testing.assert_allclose(read_grid(path).values, t.values, rtol=1e-6)
    import json
    meta = json.loads((tmp_path / "abc.json").read_text())
    assert meta == {"sigma": 2.0, "radius": 6, "factor": 4}
