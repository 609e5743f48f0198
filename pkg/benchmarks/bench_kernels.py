"""Time the jit kernels against their pure-numpy twins.

Runs each kernel on a fixed workload, checks that both paths agree, and
prints median wall times with the speedup. With numba missing or
TEXSYNTH_DISABLE_NUMBA=1 only the numpy column is filled.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from texsynth import _kernels


def median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def workloads():
    rng = np.random.default_rng(0)
    x = rng.random((128, 128, 16))
    kern = rng.standard_normal((32, 16, 3, 3)) * 0.1
    bias = rng.standard_normal(32) * 0.1
    g = rng.random((128, 128, 32))
    synth = rng.random((40, 40, 3))
    exemplar = rng.random((40, 40, 3))

    jobs = [
        ("conv3x3 128x128x16->32",
         lambda: _kernels.conv3x3_numpy(x, kern, bias),
         (lambda: _kernels._conv3x3_jit(x, kern, bias)) if _kernels.HAS_NUMBA else None),
        ("conv3x3_back 128x128x32->16",
         lambda: _kernels.conv3x3_back_numpy(g, kern),
         (lambda: _kernels._conv3x3_back_jit(g, kern)) if _kernels.HAS_NUMBA else None),
        ("displacement 40x40x3 patch5",
         lambda: _kernels.displacement_numpy(synth, exemplar, 5),
         (lambda: _kernels._displacement_jit(synth, exemplar, 5)) if _kernels.HAS_NUMBA else None),
    ]
    return jobs


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if not _kernels.HAS_NUMBA:
        print("numba path unavailable (not installed or disabled); "
              "timing the numpy path only")

    header = f"{'kernel':<30} {'numpy':>10} {'numba':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, numpy_fn, jit_fn in workloads():
        t_np = median_time(numpy_fn, args.repeats)
        if jit_fn is None:
            print(f"{name:<30} {t_np * 1e3:>8.2f}ms {'-':>10} {'-':>8}")
            continue
        jit_fn()  # first call compiles; keep it out of the timings
        diff = np.max(np.abs(np.asarray(numpy_fn(), float)
                             - np.asarray(jit_fn(), float)))
        if diff > 1e-9:
            raise SystemExit(f"{name}: paths disagree by {diff:.3e}")
        t_jit = median_time(jit_fn, args.repeats)
        print(f"{name:<30} {t_np * 1e3:>8.2f}ms {t_jit * 1e3:>8.2f}ms "
              f"{t_np / t_jit:>7.1f}x")


if __name__ == "__main__":
    main()
