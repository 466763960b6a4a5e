"""Compiled vs. pure-Python kernels.

    python benchmarks/bench_kernels.py [--rows N] [--dim D] [--repeat R]

Times the one-pass online leverage loop and the Khatri-Rao row power on the
same seeded input with both backends, checks they agree, and prints a table.
"""
import argparse
import sys
import timeit

import numpy as np

from levattn import _backend
from levattn.sensitivities import SPAN_TOL


def bench(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=20000)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--half-p", type=int, default=2)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if _backend.compiled_kernels is None:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
        return 1
    py, cy = _backend.python_kernels, _backend.compiled_kernels
    K = np.random.default_rng(args.seed).standard_normal((args.rows, args.dim))

    s_py, _ = py.online_scores(K, SPAN_TOL)
    s_cy, _ = cy.online_scores(K, SPAN_TOL)
    drift = float(np.max(np.abs(s_py - s_cy)))
    kr_equal = np.array_equal(py.khatri_rao_power(K, args.half_p), cy.khatri_rao_power(K, args.half_p))

    rows = [
        ("online_scores", lambda k: k.online_scores(K, SPAN_TOL)),
        (f"khatri_rao_power h={args.half_p}", lambda k: k.khatri_rao_power(K, args.half_p)),
    ]
    print(f"n={args.rows} d={args.dim} (best of {args.repeat})")
    print(f"{'kernel':<24}{'python s':>12}{'cython s':>12}{'speedup':>10}")
    for name, call in rows:
        t_py = bench(lambda: call(py), args.repeat)
        t_cy = bench(lambda: call(cy), args.repeat)
        print(f"{name:<24}{t_py:>12.4f}{t_cy:>12.4f}{t_py / t_cy:>9.1f}x")
    print(f"max |score difference| = {drift:.2e}; Khatri-Rao outputs identical: {kr_equal}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
