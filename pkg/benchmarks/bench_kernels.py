"""Time the compiled and numpy raster kernels on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--heads 200]
"""
import argparse
import timeit

import numpy as np

from mmcount import kernels
from mmcount.density import KernelSpec, gaussian_kernel
from mmcount.metrics import axis_bounds


def cases(rng, heads):
    h, w = 512, 640
    kernel = gaussian_kernel(KernelSpec(7.0)).values.astype(np.float64)
    rows = rng.integers(0, h, heads).astype(np.int64)
    cols = rng.integers(0, w, heads).astype(np.int64)
    grid = rng.random((h, w))
    rb, cb = axis_bounds(h, 3), axis_bounds(w, 3)
    return {
        f"stamp_kernels ({heads} heads, sigma 7, 512x640)":
            lambda impl: impl.stamp_kernels(np.zeros((h, w)), kernel, rows, cols),
        "block_sum (factor 4, 512x640)": lambda impl: impl.block_sum(grid, 4),
        "patch_sums (64 patches, 512x640)": lambda impl: impl.patch_sums(grid, rb, cb),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timing repeats (best is reported)")
    ap.add_argument("--number", type=int, default=20, help="calls per repeat")
    ap.add_argument("--heads", type=int, default=200, help="points stamped per call")
    args = ap.parse_args()

    backends = {"python": kernels.get_backend("python")}
    try:
        backends["cython"] = kernels.get_backend("cython")
    except ImportError:
        print("compiled extension not built; timing the numpy backend only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<46}" + "".join(f"{b:>12}" for b in backends) + "   speedup")
    for name, fn in cases(rng, args.heads).items():
        times = {}
        for b, impl in backends.items():
            best = min(timeit.repeat(lambda: fn(impl), repeat=args.repeat, number=args.number))
            times[b] = best / args.number * 1e3
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:<46}" + "".join(f"{t:>10.3f}ms" for t in times.values()) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
