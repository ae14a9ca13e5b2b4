"""Compare the compiled and the numpy kernels on random inputs.

Usage::

    python benchmarks/bench_kernels.py [--sizes 64 256 1024] [--repeat 5]

Each kernel is timed with ``timeit`` (best of ``--repeat``) and the two
backends' outputs are checked for equality before timing.
"""
import argparse
import timeit

import numpy as np

from freqcert import _kernels_py

try:
    from freqcert import _kernels
except ImportError:  # extension not built
    _kernels = None


def _cases(n, k, rng):
    pts = rng.standard_normal((n, 3))
    d2 = np.ascontiguousarray(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    weights = rng.random(n)
    draws = max(1, n // 4)
    uniforms = rng.random(draws)
    return {
        "knn_select": lambda mod: mod.knn_select(d2, k),
        "weighted_sample": lambda mod: mod.weighted_sample(weights, draws, uniforms),
    }


def _best(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[64, 256, 1024])
    parser.add_argument("--k", type=int, default=10)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(args.seed)

    print(f"{'kernel':<16} {'n':>6} {'python [ms]':>12} {'cython [ms]':>12} {'speedup':>8}")
    for n in args.sizes:
        for name, call in _cases(n, min(args.k, n - 1), rng).items():
            t_py = _best(lambda: call(_kernels_py), args.repeat)
            if _kernels is None:
                print(f"{name:<16} {n:>6} {1e3 * t_py:>12.4f} {'n/a':>12} {'n/a':>8}")
                continue
            if not np.array_equal(call(_kernels_py), call(_kernels)):
                raise SystemExit(f"{name}: backends disagree at n={n}")
            t_cy = _best(lambda: call(_kernels), args.repeat)
            print(f"{name:<16} {n:>6} {1e3 * t_py:>12.4f} {1e3 * t_cy:>12.4f} {t_py / t_cy:>7.1f}x")


if __name__ == "__main__":
    main()
