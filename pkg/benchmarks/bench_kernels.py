"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is called once before timing so numba compilation is excluded.
Outputs of the two routes are compared before timing.
"""

import argparse
import time

import numpy as np

from selfembed import _accel
from selfembed.assignment import _auction_kernel, _auction_numpy, _hungarian_kernel, _hungarian_numpy
from selfembed.geometry import _fps_kernel, _fps_numpy, _knn_kernel, _knn_numpy


def best_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def first(result):
    return np.asarray(result[0] if isinstance(result, tuple) else result)


def cases(rng):
    P = rng.normal(size=(4096, 3))
    Q = P[:1024]
    cost = rng.uniform(size=(256, 256))
    big = rng.uniform(size=(1024, 1024))
    eps0, eps1 = float(np.ptp(big)) / 4, float(np.ptp(big)) * 1e-4 / 1024
    total = lambda c, col: c[np.arange(len(col)), col].sum()
    return [
        ("fps 4096->1024", lambda: _fps_kernel(P, 1024, 0), lambda: _fps_numpy(P, 1024, 0), np.array_equal),
        ("knn 1024x4096 K=16", lambda: _knn_kernel(Q, P, 16), lambda: _knn_numpy(Q, P, 16), np.array_equal),
        ("hungarian 256", lambda: _hungarian_kernel(cost), lambda: _hungarian_numpy(cost),
         lambda a, b: np.isclose(total(cost, a), total(cost, b))),
        ("auction 1024", lambda: _auction_kernel(-big, eps0, eps1, 4.0), lambda: _auction_numpy(-big, eps0, eps1, 4.0),
         lambda a, b: abs(total(big, a) - total(big, b)) <= 1024 * eps1),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not _accel.HAS_NUMBA:
        print("numba unavailable or disabled; both columns time the numpy route")
    print(f"{'kernel':<22}{'numba s':>10}{'numpy s':>10}{'speedup':>9}  agree")
    for name, fast, slow, same in cases(np.random.default_rng(0)):
        agree = bool(same(first(fast()), first(slow())))
        tf, ts = best_time(fast, args.repeat), best_time(slow, args.repeat)
        print(f"{name:<22}{tf:>10.4f}{ts:>10.4f}{ts / tf:>9.1f}  {agree}")


if __name__ == "__main__":
    main()
