#!/usr/bin/env python3
"""Benchmark the jitted kernels against their pure-numpy fallbacks.

Each hot kernel ships in two builds selected at call time by the
``RAINSTACK_NO_NUMBA`` environment flag. This script times both builds on
identical inputs (best of ``--repeats`` after a warm-up call that also
absorbs JIT compilation) and cross-checks that they agree.

Usage::

    python3 benchmarks/bench_kernels.py [--size 256] [--frames 7] [--repeats 5]
"""

import argparse
import os
import time

import numpy as np

from rainstack import DsfParams, LayerParams, backward_warp, dsf_map, temporal_median
from rainstack._accel import NUMBA_AVAILABLE
from rainstack.flow_warp import synth_translation_flow
from rainstack.model import depthwise_conv5


def _best_of(fn, repeats: int) -> float:
    fn()  # warm-up (includes JIT compilation on the numba path)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _run_both(fn, repeats: int):
    """Return (numpy_seconds, numba_seconds, max_abs_diff)."""
    os.environ["RAINSTACK_NO_NUMBA"] = "1"
    try:
        t_numpy = _best_of(fn, repeats)
        ref = np.asarray(fn())
    finally:
        os.environ["RAINSTACK_NO_NUMBA"] = "0"
    t_numba = _best_of(fn, repeats)
    diff = float(np.max(np.abs(np.asarray(fn()) - ref)))
    return t_numpy, t_numba, diff


def build_cases(size: int, frames: int, channels: int):
    rng = np.random.default_rng(0)
    h = w = size

    stack = rng.uniform(0.0, 1.0, (frames, h, w, 3))
    dsf_params = DsfParams.constant(500.0, 1.0, h, w)

    img = rng.uniform(0.0, 1.0, (h, w, 3))
    flow = synth_translation_flow(0.7, -1.3, h, w)

    center = rng.uniform(0.0, 1.0, (h, w, 3))
    aligned = [
        backward_warp(rng.uniform(0.0, 1.0, (h, w, 3)),
                      synth_translation_flow(float(k), float(-k), h, w))
        for k in range(-(frames // 2), frames // 2 + 1) if k != 0
    ]

    feat = rng.normal(0.0, 1.0, (h, w, channels))
    conv = LayerParams(rng.normal(0.0, 0.1, (channels, 5, 5)),
                       rng.normal(0.0, 0.1, channels))

    return [
        ("dsf_map", lambda: dsf_map(stack, dsf_params)),
        ("backward_warp", lambda: backward_warp(img, flow).image),
        ("temporal_median", lambda: temporal_median(center, aligned)),
        ("depthwise_conv5", lambda: depthwise_conv5(feat, conv)),
    ]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=256,
                        help="square image side (default 256)")
    parser.add_argument("--frames", type=int, default=7,
                        help="stack depth for dsf_map / temporal_median")
    parser.add_argument("--channels", type=int, default=8,
                        help="feature channels for depthwise_conv5")
    parser.add_argument("--repeats", type=int, default=5,
                        help="timed repetitions per kernel (best is reported)")
    args = parser.parse_args(argv)

    if not NUMBA_AVAILABLE:
        print("numba is not installed; only the numpy fallback can run")
        return 1

    print(f"size={args.size} frames={args.frames} channels={args.channels} "
          f"repeats={args.repeats}")
    print(f"{'kernel':<18}{'numpy (ms)':>12}{'numba (ms)':>12}"
          f"{'speedup':>10}{'max |diff|':>12}")
    for name, fn in build_cases(args.size, args.frames, args.channels):
        t_numpy, t_numba, diff = _run_both(fn, args.repeats)
        print(f"{name:<18}{t_numpy * 1e3:>12.2f}{t_numba * 1e3:>12.2f}"
              f"{t_numpy / t_numba:>9.1f}x{diff:>12.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
