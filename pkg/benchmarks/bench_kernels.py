"""Compare the compiled and pure-Python tree kernels.

    python benchmarks/bench_kernels.py [--rows 100000] [--features 12] [--repeat 3]
"""

import argparse
import time

import numpy as np

from rfqcausal import _core


def problem(n, d, seed=0):
    rng = np.random.default_rng(seed)
    Z = np.ascontiguousarray(rng.standard_normal((n, d)))
    p = 1.0 / (1.0 + np.exp(-(Z[:, 0] - 0.5 * Z[:, 1] * Z[:, 2])))
    y = (rng.random(n) < p).astype(float)
    g = np.ascontiguousarray(0.5 - y)
    h = np.full(n, 0.25)
    order = np.ascontiguousarray(np.argsort(Z, axis=0, kind="stable").T.astype(np.int64))
    sample = (rng.random(n) < 0.6).astype(np.uint8)
    fmask = np.ones(d, dtype=np.uint8)
    return order, Z, g, h, sample, fmask


def timed(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=100_000)
    ap.add_argument("--features", type=int, default=12)
    ap.add_argument("--leaves", type=int, default=15)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    order, Z, g, h, sample, fmask = problem(args.rows, args.features)
    results = {}
    for name in ("python", "compiled"):
        try:
            k = _core.backend(name)
        except ImportError:
            print(f"{name:9s} not built")
            continue
        t_grow, tree = timed(lambda: k.grow_tree(order, Z, g, h, sample, fmask, 50, 1.0, args.leaves), args.repeat)
        roots = np.zeros(1, np.int64)
        t_pred, _ = timed(lambda: k.predict_raw(Z, *tree[:5], roots), args.repeat)
        results[name] = tree
        print(f"{name:9s} grow_tree {t_grow * 1e3:9.2f} ms   predict_raw {t_pred * 1e3:8.2f} ms")
    if len(results) == 2:
        same = all(np.array_equal(a, b) for a, b in zip(results["python"], results["compiled"]))
        print(f"identical trees: {same}")


if __name__ == "__main__":
    main()
