#!/usr/bin/env python3
"""Median-timing comparison of the jitted raster kernels vs their numpy fallbacks.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats N] [--sizes 128,512,1024]

The production dispatch picks numba when importable (see BGFORGE_NO_NUMBA);
this script calls both implementations directly so one process can report
the speedup side by side.  RLE encode/decode timings are included for scale,
although that codec is vectorized numpy on both paths.
"""

import argparse
import time

import numpy as np

from bgforge import coco
from bgforge._kernels import _erode_numpy, _fill_numpy, kernel_backend, warmup
from bgforge.masks import BinaryMask


def median_ms(fn, repeats):
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1000.0)
    return sorted(samples)[len(samples) // 2]


def star_polygon(points, cx, cy, r_outer, r_inner):
    """Flat vertex arrays of a star with `points` tips (2*points vertices)."""
    angles = np.linspace(0.0, 2.0 * np.pi, 2 * points, endpoint=False)
    radii = np.where(np.arange(2 * points) % 2 == 0, r_outer, r_inner)
    return cx + radii * np.cos(angles), cy + radii * np.sin(angles)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=21, help="samples per measurement")
    parser.add_argument("--sizes", default="128,512,1024", help="square raster sides to test")
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    if kernel_backend() != "numba":
        print("numba unavailable (or disabled); reporting numpy path only\n")
        erode_numba = fill_numba = None
    else:
        from bgforge._kernels import _erode_numba, _fill_numba

        erode_numba, fill_numba = _erode_numba, _fill_numba
        warmup()

    rng = np.random.default_rng(0)
    rows = []

    for side in sizes:
        mask = (rng.random((side, side)) < 0.5).astype(np.uint8)
        for k in (3, 7):
            numpy_ms = median_ms(lambda: _erode_numpy(mask, k), args.repeats)
            numba_ms = (
                median_ms(lambda: erode_numba(mask, k), args.repeats) if erode_numba else None
            )
            rows.append((f"erode {side}x{side} k={k}", numpy_ms, numba_ms))

        vx, vy = star_polygon(64, side / 2, side / 2, side * 0.48, side * 0.2)
        starts = np.array([0, len(vx)], np.int64)
        numpy_ms = median_ms(lambda: _fill_numpy(vx, vy, starts, side, side), args.repeats)
        numba_ms = (
            median_ms(lambda: fill_numba(vx, vy, starts, side, side), args.repeats)
            if fill_numba
            else None
        )
        rows.append((f"fill 64-tip star {side}x{side}", numpy_ms, numba_ms))

        bm = BinaryMask.from_array(mask)
        counts = coco.rle_encode(bm)
        rows.append((f"rle encode {side}x{side}", median_ms(lambda: coco.rle_encode(bm), args.repeats), None))
        rows.append(
            (
                f"rle decode {side}x{side}",
                median_ms(lambda: coco.rle_decode(counts, side, side), args.repeats),
                None,
            )
        )

    name_w = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{name_w}}  {'numpy ms':>9}  {'numba ms':>9}  {'speedup':>7}")
    for name, numpy_ms, numba_ms in rows:
        if numba_ms is None:
            print(f"{name:<{name_w}}  {numpy_ms:>9.3f}  {'-':>9}  {'-':>7}")
        else:
            print(f"{name:<{name_w}}  {numpy_ms:>9.3f}  {numba_ms:>9.3f}  {numpy_ms / numba_ms:>6.1f}x")


if __name__ == "__main__":
    main()
