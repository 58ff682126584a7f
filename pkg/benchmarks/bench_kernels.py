#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Run after building the extension (`pip install -e .`):

    python3 benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from cyclex.kernels import fallback

try:
    from cyclex.kernels import _corek
except ImportError:
    _corek = None


def timeit(fn, repeats):
    fn()  # warmup
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    if _corek is None:
        print("compiled extension not built; showing numpy fallback only")
    impls = [("numpy", fallback)] + ([("cython", _corek)] if _corek else [])

    rng = np.random.default_rng(0)
    rows = []

    for dt in (np.float32, np.float64):
        x = rng.normal(size=(8, 16, 64, 64)).astype(dt)
        w = rng.normal(size=(16, 16, 3, 3)).astype(dt)
        b = np.zeros(16, dtype=dt)
        gy = rng.normal(size=(8, 16, 64, 64)).astype(dt)
        gflop = 8 * 16 * 16 * 9 * 2 * 64 * 64 / 1e9
        for name, impl in impls:
            t = timeit(lambda: impl.conv2d_forward(x, w, b), args.repeats)
            rows.append((f"conv2d_forward {np.dtype(dt).name}", name, t, gflop / t))
            t = timeit(lambda: impl.conv2d_backward(x, w, gy), args.repeats)
            rows.append((f"conv2d_backward {np.dtype(dt).name}", name, t, 3 * gflop / t))

    img = rng.random((256, 256))
    k = np.array([0.05, 0.25, 0.4, 0.25, 0.05])
    for name, impl in impls:
        t = timeit(lambda: impl.blur_separable(img, k), args.repeats)
        rows.append(("blur_separable 256x256", name, t, None))

    mask = (rng.random((256, 256)) < 0.45).astype(np.uint8)
    for name, impl in impls:
        t = timeit(lambda: impl.label_components(mask, 8), args.repeats)
        rows.append(("label_components 256x256", name, t, None))

    print(f"{'kernel':28s} {'backend':8s} {'ms':>9s} {'GFLOP/s':>9s}")
    for op, name, t, gf in rows:
        gfs = f"{gf:9.1f}" if gf else " " * 9
        print(f"{op:28s} {name:8s} {t * 1e3:9.2f} {gfs}")

    if _corek is not None:
        by_op: dict[str, dict[str, float]] = {}
        for op, name, t, _ in rows:
            by_op.setdefault(op, {})[name] = t
        print("\nspeedup (numpy time / cython time):")
        for op, times in by_op.items():
            print(f"  {op:28s} {times['numpy'] / times['cython']:6.2f}x")


if __name__ == "__main__":
    main()
