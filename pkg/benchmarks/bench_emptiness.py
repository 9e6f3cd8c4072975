"""Emptiness kernels: numba vs pure Python on random graphs and a real product.

    python3 benchmarks/bench_emptiness.py [--nodes 200000] [--degree 3] [--repeat 3]

Run once with numba (default) and compare against the pure kernels that the
script also times directly; ``SECWIT_DISABLE_NUMBA=1`` switches the library
itself to the pure versions.
"""

import argparse
import time

import numpy as np

from secwit import kernels
from secwit.automaton import find_accepting_lasso, product
from secwit.fixtures import load_fixture


def random_graph(n, degree, seed):
    rng = np.random.default_rng(seed)
    indices = rng.integers(0, n, size=n * degree, dtype=np.int64)
    indptr = np.arange(0, n * degree + 1, degree, dtype=np.int64)
    accepting = np.zeros(n, dtype=np.bool_)
    # one accepting node deep in the graph keeps the red search busy
    accepting[n - 1] = True
    return indptr, indices, accepting


def timed(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--nodes", type=int, default=200_000)
    ap.add_argument("--degree", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    indptr, indices, acc = random_graph(args.nodes, args.degree, args.seed)
    print(f"numba enabled: {kernels.USE_NUMBA}")
    if kernels.USE_NUMBA:
        one = np.array([0, 1], dtype=np.int64)
        kernels.nested_dfs(one, np.array([0], dtype=np.int64), np.array([True]), 0)  # compile
        kernels.bfs_parents(one, np.array([0], dtype=np.int64), np.array([0], dtype=np.int64), 0)
    for name, fn in (("nested_dfs", kernels.nested_dfs), ("nested_dfs_py", kernels.nested_dfs_py)):
        t, seed = timed(lambda: fn(indptr, indices, acc, 0), args.repeat)
        print(f"{name:16s} n={args.nodes} seed={seed} {t * 1000:.1f} ms")
    src = np.array([0], dtype=np.int64)
    for name, fn in (("bfs_parents", kernels.bfs_parents), ("bfs_parents_py", kernels.bfs_parents_py)):
        t, _ = timed(lambda: fn(indptr, indices, src, args.nodes - 1), args.repeat)
        print(f"{name:16s} n={args.nodes} {t * 1000:.1f} ms")

    fx = load_fixture("dead_store_elimination")
    for idx, aut in enumerate(fx.automata()):
        ps = product(aut, fx.target, fx.model, 2)
        t, lasso = timed(lambda: find_accepting_lasso(ps), args.repeat)
        print(f"product dse[{idx}]  {'nonempty' if lasso else 'empty':8s} {t * 1000:.1f} ms")


if __name__ == "__main__":
    main()
