"""Time each hot kernel on the numba and numpy backends.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--size WxH]
Numba times exclude the first (compiling) call.
"""
import argparse
import time

import numpy as np

from tempofuse.kernels import _jit, _np


def _inputs(w, h, rng):
    left = rng.random((h, w))
    right = np.roll(left, -8, axis=1)
    codes_l = _np.census_transform(left, 3)
    codes_r = _np.census_transform(right, 3)
    gv, gu = np.mgrid[2:h:4, 2:w:4]
    pts_v, pts_u = gv.ravel().astype(np.int64), gu.ravel().astype(np.int64)
    n = h * w
    target = rng.integers(0, n, n).astype(np.int64)
    z = rng.random(n) + 1.0
    ok = rng.random(n) > 0.1
    return {
        "census_transform": lambda m: m.census_transform(left, 3),
        "hamming": lambda m: m.hamming(codes_l, codes_r),
        "stereo_cost_volume": lambda m: m.stereo_cost_volume(left, right, codes_l, codes_r, 64, 3, 0.3, 48.0),
        "patch_match": lambda m: m.patch_match(codes_l, codes_r, pts_v, pts_u, 8, 2),
        "zbuffer_winners": lambda m: m.zbuffer_winners(target, z, ok, n, 1e-12),
    }


def _best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", default="160x120")
    args = ap.parse_args()
    w, h = (int(x) for x in args.size.split("x"))
    cases = _inputs(w, h, np.random.default_rng(0))
    print(f"{'kernel':20s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, call in cases.items():
        call(_jit)  # compile
        t_np = _best_of(lambda: call(_np), args.repeat)
        t_jit = _best_of(lambda: call(_jit), args.repeat)
        print(f"{name:20s} {1e3 * t_np:10.2f} {1e3 * t_jit:10.2f} {t_np / t_jit:8.1f}x")


if __name__ == "__main__":
    main()
