"""Timing comparison of the compiled and plain-numpy kernel paths.

The path is chosen at import time from CONDDET_NUMBA, so this script
re-runs itself in a subprocess per path and prints a side-by-side table.
Results are asserted bit-identical across paths while timing.

    python3 benchmarks/bench_kernels.py [--repeats 50]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def make_cases():
    rng = np.random.default_rng(12345)

    def boxes(n):
        cxy = rng.uniform(0.2, 0.8, (n, 2))
        wh = rng.uniform(0.1, 0.3, (n, 2))
        return np.concatenate([cxy, wh], axis=1)

    cost_small = rng.uniform(0.0, 10.0, (16, 64))
    cost_large = rng.uniform(0.0, 10.0, (64, 256))
    a, b = boxes(64), boxes(256)
    n_rect = 8
    raster = dict(
        image=np.zeros((128, 128)),
        x0=rng.integers(0, 64, n_rect),
        y0=rng.integers(0, 64, n_rect),
        w=rng.integers(16, 64, n_rect),
        h=rng.integers(16, 64, n_rect),
        pattern=rng.integers(0, 3, n_rect),
        level=rng.uniform(0.5, 1.0, n_rect),
    )
    return cost_small, cost_large, a, b, raster


def run_one_path(repeats):
    from conddet import _kernels

    cost_small, cost_large, a, b, raster = make_cases()
    cases = [
        ("assign 16x64", lambda: _kernels.assign_min_cost(cost_small)),
        ("assign 64x256", lambda: _kernels.assign_min_cost(cost_large)),
        ("giou 64x256", lambda: _kernels.giou_matrix(a, b)),
        ("iou 64x256", lambda: _kernels.iou_matrix(a, b)),
        ("l1 64x256", lambda: _kernels.l1_matrix(a, b)),
        (
            "rasterize 128^2 x8",
            lambda: _kernels.rasterize_boxes(
                raster["image"].copy(),
                raster["x0"],
                raster["y0"],
                raster["w"],
                raster["h"],
                raster["pattern"],
                raster["level"],
            ),
        ),
    ]
    out = {"numba_active": _kernels.NUMBA_ACTIVE, "times": {}, "digests": {}}
    for name, fn in cases:
        fn()  # warm-up: triggers compilation on the numba path
        best = min(_time_once(fn) for _ in range(repeats))
        out["times"][name] = best
        result = fn()
        out["digests"][name] = _digest(result)
    return out


def _time_once(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def _digest(arr):
    arr = np.ascontiguousarray(arr)
    import hashlib

    return hashlib.sha256(arr.tobytes()).hexdigest()[:16]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--one-path", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()

    if args.one_path:
        print(json.dumps(run_one_path(args.repeats)))
        return 0

    results = {}
    for label, flag in (("numpy", "0"), ("numba", "1")):
        env = dict(os.environ, CONDDET_NUMBA=flag)
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--one-path",
             "--repeats", str(args.repeats)],
            env=env, capture_output=True, text=True, check=True,
        )
        results[label] = json.loads(proc.stdout.strip().splitlines()[-1])

    if results["numba"]["numba_active"] is not True:
        print("warning: numba path unavailable, comparing numpy against itself")
    mismatched = [
        name
        for name in results["numpy"]["digests"]
        if results["numpy"]["digests"][name] != results["numba"]["digests"][name]
    ]
    if mismatched:
        print(f"RESULT MISMATCH between paths: {mismatched}", file=sys.stderr)
        return 1

    print(f"{'kernel':<20} {'numpy':>12} {'numba':>12} {'speedup':>9}")
    for name, t_np in results["numpy"]["times"].items():
        t_nb = results["numba"]["times"][name]
        print(f"{name:<20} {t_np * 1e6:>10.1f}us {t_nb * 1e6:>10.1f}us "
              f"{t_np / t_nb:>8.1f}x")
    print("outputs bit-identical across paths")
    return 0


if __name__ == "__main__":
    sys.exit(main())
