"""Time the compiled kernels against the NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from pibic import _kernels_py

try:
    from pibic import _kernels
except ImportError:
    _kernels = None


def cases():
    g = np.random.default_rng(0)
    W = np.cumsum(g.chisquare(1, size=(5000, 20)), axis=1)
    z = g.normal(size=(2000, 99))
    y = g.normal(size=76)
    X = np.linalg.qr(np.vander(np.linspace(-1, 1, 76), 7))[0]
    yield "log_exp_half_rowsum 5000x20", lambda m: m.log_exp_half_rowsum(W)
    yield "nested_log_terms 5000x20", lambda m: m.nested_log_terms(W, np.log(100.0))
    yield "order_select 5000x20", lambda m: m.order_select(W, np.log(100.0), 1)
    yield "running_neyman 2000x99", lambda m: m.running_neyman(z)
    yield "star_whiten n=76", lambda m: m.star_whiten(y, 0.3, 0.5, -0.2, -0.002)
    yield "star_profile_loglik n=76 k=6", lambda m: m.star_profile_loglik(y, X, 0.3, 0.5, -0.2, -0.002)


def best_time(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
    print(f"{'kernel':<32}{'numpy (us)':>12}{'cython (us)':>13}{'speedup':>9}")
    for name, call in cases():
        t_py = best_time(lambda: call(_kernels_py), args.repeat)
        if _kernels is None:
            print(f"{name:<32}{t_py * 1e6:12.1f}{'-':>13}{'-':>9}")
            continue
        t_c = best_time(lambda: call(_kernels), args.repeat)
        print(f"{name:<32}{t_py * 1e6:12.1f}{t_c * 1e6:13.1f}{t_py / t_c:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
