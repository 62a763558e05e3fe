"""The compiled and numpy kernels must agree."""
import numpy as np
import pytest

from mmcount import kernels
from mmcount import _pykernels

pytestmark = pytest.mark.skipif(kernels.BACKEND != "cython", reason="extension not built")


def _c():
    return kernels.get_backend("cython")


def test_stamp_kernels_agree(rng):
    kernel = rng.random((9, 9))
    rows = rng.integers(0, 30, 40).astype(np.int64)
    cols = rng.integers(0, 25, 40).astype(np.int64)
    a, b = np.zeros((30, 25)), np.zeros((30, 25))
    _pykernels.stamp_kernels(a, kernel, rows, cols)
    _c().stamp_kernels(b, kernel, rows, cols)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("factor", [1, 2, 3, 4])
def test_block_sum_agree(rng, factor):
    g = rng.random((12, 24))
    np.testing.assert_allclose(_pykernels.block_sum(g, factor), _c().block_sum(g, factor),
                               rtol=1e-12)


def test_patch_sums_agree(rng):
    g = rng.random((37, 53))
    rb = np.array([0, 9, 18, 27, 37], dtype=np.int64)
    cb = np.array([0, 13, 26, 39, 53], dtype=np.int64)
    np.testing.assert_allclose(_pykernels.patch_sums(g, rb, cb), _c().patch_sums(g, rb, cb),
                               rtol=1e-12)


def test_default_backend_is_compiled():
    assert kernels.stamp_kernels is _c().stamp_kernels
