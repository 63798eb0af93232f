"""Compiled vs numpy kernels: per-call timings and an end-to-end Sinkhorn solve.

    python benchmarks/bench_kernels.py --sizes 500,1000,2000 --repeat 5

Prints one CSV row per (kernel, size) with the best time of each backend and
the speedup of the compiled one.
"""
import argparse
import csv
import sys
import timeit
from contextlib import contextmanager

import numpy as np

import otdd._kernels as K
from otdd.distance import OtddConfig, prepare_ground_cost
from otdd.otsolve import sinkhorn, uniform
from otdd.synthetic import gaussian_classes

KERNELS = ("softmin_rows", "softmin_cols", "plan_from_potentials", "assemble_cost")


@contextmanager
def backend(mod):
    saved = {name: getattr(K, name) for name in KERNELS}
    for name in KERNELS:
        setattr(K, name, getattr(mod, name))
    try:
        yield
    finally:
        for name, fn in saved.items():
            setattr(K, name, fn)


def kernel_calls(n, d, seed):
    rng = np.random.default_rng(seed)
    XA, XB = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    ya = rng.integers(0, 10, n).astype(np.int64)
    yb = rng.integers(0, 10, n).astype(np.int64)
    L = rng.uniform(0, 1, (10, 10))
    G = XA @ XB.T
    xa2, xb2 = (XA * XA).sum(1), (XB * XB).sum(1)
    C = rng.uniform(0, 1, (n, n))
    f, g = rng.normal(size=n) * 0.01, rng.normal(size=n) * 0.01
    la = lb = np.log(uniform(n))
    vec, mat = np.empty(n), np.empty((n, n))
    return {
        "softmin_rows": lambda m: m.softmin_rows(C, g, lb, 0.01, vec),
        "softmin_cols": lambda m: m.softmin_cols(C, f, la, 0.01, vec),
        "plan_from_potentials": lambda m: m.plan_from_potentials(C, f, g, la, lb, 0.01, mat),
        "assemble_cost": lambda m: m.assemble_cost(G, XA, XB, xa2, xb2, ya, yb, L, 2, mat),
    }


def best_time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--sizes", default="500,1000,2000")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    if K.compiled is None:
        sys.exit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["kernel", "n", "cython_s", "numpy_s", "speedup"])
    for n in (int(s) for s in args.sizes.split(",")):
        calls = kernel_calls(n, args.dim, args.seed)
        for name in KERNELS:
            tc = best_time(lambda: calls[name](K.compiled), args.repeat)
            tp = best_time(lambda: calls[name](K.python), args.repeat)
            w.writerow([name, n, f"{tc:.5f}", f"{tp:.5f}", f"{tp / tc:.2f}"])

        A = gaussian_classes(n, 2, 4, seed=args.seed)
        B = gaussian_classes(n, 2, 4, seed=args.seed + 1, shift=1.0)
        C = prepare_ground_cost(A, B, OtddConfig()).cost
        eps = 0.1 * C.mean()
        times = {}
        for label, mod in (("cython", K.compiled), ("numpy", K.python)):
            with backend(mod):
                times[label] = best_time(lambda: sinkhorn(uniform(n), uniform(n), C, eps), max(1, args.repeat // 2))
        w.writerow(["sinkhorn_solve", n, f"{times['cython']:.5f}", f"{times['numpy']:.5f}", f"{times['numpy'] / times['cython']:.2f}"])
        sys.stdout.flush()


if __name__ == "__main__":
    main()
