"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 20]

Prints one line per (kernel, size) with the median time of each path and the
speed-up. Outputs are checked for agreement before timing.
"""

import argparse
import time

import numpy as np

from vkdlab import _kernels as K


def median_time(fn, args, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    if not K.HAVE_NUMBA:
        print("numba not importable; nothing to compare")
        return

    rng = np.random.default_rng(0)
    cases = []
    for length in (20, 200, 2000):
        a = rng.integers(0, 5, length)
        b = rng.integers(0, 5, length)
        cases.append(("lcs", f"len={length}", K.lcs_length_numba, K.lcs_length_numpy, (a, b)))
    for n, n_out, n_in in ((16, 64, 64), (256, 64, 64), (2048, 64, 96)):
        delta = rng.standard_normal((n, n_out)) * (rng.random((n, n_out)) > 0.5)
        x = rng.standard_normal((n, n_in))
        cases.append(("fisher", f"{n}x{n_out}x{n_in}", K.fisher_accumulate_numba,
                      K.fisher_accumulate_numpy, (delta, x)))

    print(f"{'kernel':8} {'size':16} {'numba_s':>11} {'numpy_s':>11} {'speedup':>8}")
    for name, size, fast, slow, fargs in cases:
        fast(*fargs)  # compile outside the timed region
        if not np.allclose(fast(*fargs), slow(*fargs), rtol=1e-12, atol=0):
            raise SystemExit(f"{name} {size}: numba and numpy disagree")
        t_fast = median_time(fast, fargs, args.repeat)
        t_slow = median_time(slow, fargs, args.repeat)
        print(f"{name:8} {size:16} {t_fast:11.2e} {t_slow:11.2e} {t_slow / t_fast:8.1f}x")


if __name__ == "__main__":
    main()
