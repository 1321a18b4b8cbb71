"""Compare the numba and numpy implementations of the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both variants are imported directly, so the environment flag does not
matter here. JIT compilation happens in a warm-up call outside the timing.
"""
import argparse
import time

import numpy as np

from gpbarrier import _kernels
from gpbarrier._accel import HAS_NUMBA
from gpbarrier.barrier import payoff_order


def _time(fn, args, repeat):
    fn(*args)
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t)
    return best


def greedy_case(rng, rows=2000, cols=101):
    lower = rng.random((rows, cols)) ** 8 / cols
    upper = np.minimum(1.0, lower + rng.random((rows, cols)) * 3.0 / cols)
    b = rng.random(cols - 1)
    return payoff_order(b), lower, upper


def interval_case(rng, boxes=4000, points=1000):
    lo = rng.random((boxes, 3))
    return lo, lo + 0.05, rng.random((points, 3)), rng.standard_normal((points, 2)), np.array([2.0, 2.0, 1.0]), 1.0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not HAS_NUMBA:
        print("numba unavailable (or disabled); both columns use numpy")
    rng = np.random.default_rng(args.seed)
    cases = [
        ("greedy_fill", _kernels.greedy_fill_numba, _kernels.greedy_fill_numpy, greedy_case(rng)),
        ("interval_sums", _kernels.interval_sums_numba, _kernels.interval_sums_numpy, interval_case(rng)),
    ]
    print(f"{'kernel':<16}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, fast, slow, case in cases:
        a, b = fast(*case), slow(*case)
        a, b = (a,) if isinstance(a, np.ndarray) else a, (b,) if isinstance(b, np.ndarray) else b
        diff = max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))
        t_fast, t_slow = _time(fast, case, args.repeat), _time(slow, case, args.repeat)
        print(f"{name:<16}{1e3 * t_fast:>12.2f}{1e3 * t_slow:>12.2f}{t_slow / t_fast:>10.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
