"""Time the compiled kernels against the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from add_distill.backend import fallback, get_kernels
from add_distill.geometry import BevBox


def cases(rng):
    a, b = rng.standard_normal((64, 48)), rng.standard_normal((48, 64))
    x = rng.standard_normal((256, 64))
    c16, c48 = rng.random((16, 16)), rng.random((48, 48))
    p = BevBox(0.0, 0.0, 4.0, 2.0, 0.3).corners()
    q = BevBox(0.5, 0.2, 3.0, 1.5, -0.7).corners()
    return {
        "matmul 64x48x64": lambda k: k.matmul(a, b),
        "softmax_rows 256x64": lambda k: k.softmax_rows(x),
        "hungarian 16x16": lambda k: k.hungarian_square(c16),
        "hungarian 48x48": lambda k: k.hungarian_square(c48),
        "box intersection": lambda k: k.convex_intersection_area(p, q),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    try:
        compiled = get_kernels("compiled")
    except Exception as exc:  # extension not built
        print(f"compiled backend unavailable: {exc}")
        compiled = None
    print(f"{'kernel':<22}{'python ms':>12}{'compiled ms':>13}{'speedup':>9}")
    for name, fn in cases(np.random.default_rng(0)).items():
        def best(k):
            n = 3 if k is fallback else 50
            return min(timeit.repeat(lambda: fn(k), number=n, repeat=args.repeat)) / n * 1e3

        t_py = best(fallback)
        if compiled is None:
            print(f"{name:<22}{t_py:>12.4f}{'-':>13}{'-':>9}")
            continue
        t_c = best(compiled)
        print(f"{name:<22}{t_py:>12.4f}{t_c:>13.4f}{t_py / t_c:>8.1f}x")


if __name__ == "__main__":
    main()
