"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel is warmed up once (numba compiles on first call), then timed
with ``timeit`` under both settings of OBJDEPTH_DISABLE_NUMBA.
"""

import argparse
import os
import timeit

import numpy as np

from objdepth import binning, losses, metrics
from objdepth.binning import DepthRaster


def cases(rng):
    probs = rng.random((208, 272, 256))
    probs /= probs.sum(-1, keepdims=True)
    centres = np.sort(rng.uniform(1e-3, 10, 256))
    half = rng.uniform(0.5, 9.5, (208, 272))
    gt = DepthRaster(rng.uniform(0.5, 9.5, (416, 544)))
    pred = gt.values * np.exp(rng.normal(0, 0.1, gt.shape))
    return {
        "expected_depth 208x272x256": lambda: binning.expected_depth(probs, centres),
        "upsample_bilinear 208x272->416x544": lambda: binning.upsample_bilinear(half, 416, 544),
        "bin_density_loss 226k pts, 256 bins": lambda: losses.bin_density_loss(gt, centres),
        "compute_metrics 416x544": lambda: metrics.compute_metrics(pred, gt),
    }


def time_mode(fn, disable, repeat):
    if disable:
        os.environ["OBJDEPTH_DISABLE_NUMBA"] = "1"
    else:
        os.environ.pop("OBJDEPTH_DISABLE_NUMBA", None)
    fn()  # warm-up / compile
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        fast = time_mode(fn, False, args.repeat)
        slow = time_mode(fn, True, args.repeat)
        print(f"{name:40s} {fast * 1e3:10.2f} {slow * 1e3:10.2f} {slow / fast:8.2f}")


if __name__ == "__main__":
    main()
