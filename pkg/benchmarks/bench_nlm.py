#!/usr/bin/env python3
"""Benchmark the compiled non-local means kernel against the numpy fallback.

Both backends produce bit-identical output (asserted here); the point of the
compiled kernel is the speedup on realistic scan sizes.

Usage:
    python benchmarks/bench_nlm.py [--sizes 200x330,512x950] [--full] [--repeat 3]

--full appends the canonical 1024x1900 scan size (slow on the fallback).
"""

import argparse
import time

import numpy as np

from octpad import kernels
from octpad.imagecore import Label
from octpad.preprocess import PreprocessConfig, dilate, nlm_denoise, otsu_threshold
from octpad.synth import PhantomParams, generate_phantom


def _phantom(height: int, width: int) -> np.ndarray:
    params = PhantomParams(
        height=height,
        width=width,
        surface_depth_mean=max(20, height // 4),
        surface_amplitude=max(4, height // 20),
        junction_offset_mean=max(12, height // 7),
        seed=99,
    )
    pixels, _ = generate_phantom(params, Label.BONAFIDE)
    return pixels


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="200x330,512x950",
                        help="comma-separated HxW sizes")
    parser.add_argument("--full", action="store_true",
                        help="include the canonical 1024x1900 size")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    sizes = []
    for token in args.sizes.split(","):
        h, w = token.lower().split("x")
        sizes.append((int(h), int(w)))
    if args.full:
        sizes.append((1024, 1900))

    if not kernels.HAVE_COMPILED:
        print("compiled kernel not built; benchmarking the fallback only")

    cfg = PreprocessConfig()
    print(f"nlm h={cfg.h} template={cfg.template} search={cfg.search}; "
          f"best of {args.repeat} runs\n")
    header = f"{'size':>12} {'compiled':>10} {'python':>10} {'speedup':>8}  identical"
    print(header)
    print("-" * len(header))
    for h, w in sizes:
        img = _phantom(h, w)
        t_py = _time(lambda: nlm_denoise(img, cfg, backend="python"), args.repeat)
        row = f"{h}x{w:>5}"
        if kernels.HAVE_COMPILED:
            t_c = _time(lambda: nlm_denoise(img, cfg, backend="compiled"), args.repeat)
            same = np.array_equal(
                nlm_denoise(img, cfg, backend="compiled"),
                nlm_denoise(img, cfg, backend="python"),
            )
            print(f"{row:>12} {t_c:>9.2f}s {t_py:>9.2f}s {t_py / t_c:>7.1f}x  {same}")
        else:
            print(f"{row:>12} {'-':>10} {t_py:>9.2f}s {'-':>8}")

    # the other pipeline stages, for context (largest size)
    img = _phantom(*sizes[-1])
    den = nlm_denoise(img, cfg)
    t_dilate = _time(lambda: dilate(den, cfg.dilate_kernel), args.repeat)
    enhanced = dilate(den, cfg.dilate_kernel)
    t_otsu = _time(lambda: otsu_threshold(enhanced), args.repeat)
    print(f"\nother stages at {sizes[-1][0]}x{sizes[-1][1]}: "
          f"dilate {t_dilate * 1000:.0f}ms, threshold {t_otsu * 1000:.0f}ms")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
