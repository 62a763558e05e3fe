"""Backend selection for the raster kernels.

The compiled extension is used when importable; set ``MMCOUNT_PURE_PYTHON=1``
to force the numpy implementation.
"""
import os

from . import _pykernels

BACKEND = "python"
stamp_kernels = _pykernels.stamp_kernels
block_sum = _pykernels.block_sum
patch_sums = _pykernels.patch_sums

if not os.environ.get("MMCOUNT_PURE_PYTHON"):
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        stamp_kernels = _ckernels.stamp_kernels
        block_sum = _ckernels.block_sum
        patch_sums = _ckernels.patch_sums


def get_backend(name):
    """Return a module-like namespace for ``"python"`` or ``"cython"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
