"""Time the compiled counting kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Prints one line per kernel with the best wall time of each backend and the
speed-up. Inputs are sized like the argument and retrieval workloads.
"""

import argparse
import timeit

import numpy as np

from dpproofs import _kernels_py

try:
    from dpproofs import _ckernels
except ImportError:
    _ckernels = None


def workloads(rng):
    n = 1 << 14
    s = 4096
    seeds = rng.integers(0, n, size=s)
    t1 = rng.integers(0, n, size=s)
    t2 = rng.integers(0, n, size=s)
    nbins = 64
    bin_ids = rng.integers(-1, nbins + 1, size=s)
    xs = rng.integers(0, 256, size=86_112)
    ys = rng.integers(0, 256, size=86_112)
    pmf = np.full(256, 1 / 256)
    cx = np.bincount(xs, minlength=256).astype(np.int64)
    cy = np.bincount(ys, minlength=256).astype(np.int64)
    return {
        "element_counts": lambda k: k.element_counts(xs, 256),
        "max_count": lambda k: k.max_count(seeds, n),
        "max_multiplicity": lambda k: k.max_multiplicity(seeds, t1, n),
        "binned_collisions": lambda k: k.binned_collisions(seeds, bin_ids, nbins + 1, t1, t2, n),
        "tv_to_reference": lambda k: k.tv_to_reference(cx, pmf, xs.size),
        "tv_two_sample": lambda k: k.tv_two_sample(cx, cy, xs.size, ys.size),
    }


def best_time(fn, repeat):
    timer = timeit.Timer(fn)
    loops, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=loops)) / loops


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled extension not built; only the fallback can be timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'python (us)':>14}{'cython (us)':>14}{'speed-up':>10}")
    for name, call in workloads(rng).items():
        tp = best_time(lambda: call(_kernels_py), args.repeat)
        if _ckernels is None:
            print(f"{name:<20}{tp * 1e6:>14.1f}{'-':>14}{'-':>10}")
            continue
        a, b = call(_kernels_py), call(_ckernels)
        # float kernels sum in a different order, so allow a few ulps
        pairs = zip(a, b) if isinstance(a, tuple) else [(a, b)]
        same = all(np.allclose(x, y, rtol=1e-12, atol=0) for x, y in pairs)
        if not same:
            raise SystemExit(f"{name}: backends disagree")
        tc = best_time(lambda: call(_ckernels), args.repeat)
        print(f"{name:<20}{tp * 1e6:>14.1f}{tc * 1e6:>14.1f}{tp / tc:>9.1f}x")


if __name__ == "__main__":
    main()
