"""Time the compiled kernels against their pure numpy/Python counterparts.

    python benchmarks/bench_kernels.py [--repeat 5]

Both paths are timed in one process: the compiled functions come from
``layoutprior.kernels`` and the fallbacks are the numpy versions or the
``py_func`` of each compiled loop.  Every pair is checked for agreement
before timing.  Needs numba enabled (the default).
"""

import argparse
import sys
import timeit

import numpy as np

from layoutprior import kernels
from layoutprior.teds import TableTree, _arrays


def random_tree(rng, n_nodes, n_labels=4):
    kids = [[] for _ in range(n_nodes)]
    for v in range(1, n_nodes):
        kids[int(rng.integers(0, v))].append(v)
    labels = rng.integers(0, n_labels, n_nodes)

    def build(v):
        return TableTree(int(labels[v]), tuple(build(c) for c in kids[v]))

    return build(0)


def cases(rng):
    a = rng.integers(0, 30, 2000)
    b = rng.integers(0, 30, 2000)
    yield "levenshtein 2000x2000", kernels._levenshtein_loop, kernels.levenshtein_numpy, (a, b)

    ids = {}
    t1, t2 = random_tree(rng, 150), random_tree(rng, 150)
    args = (*_arrays(t1, ids), *_arrays(t2, ids))
    yield "zhang_shasha 150x150 nodes", kernels.zhang_shasha, kernels.zhang_shasha.py_func, args

    x, y = rng.normal(size=(1000, 64)), rng.normal(size=(1000, 64))
    yield "rbf_sum 1000x1000x64", kernels._rbf_sum_loop, kernels.rbf_sum_numpy, (x, y, 0.01, False)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    if not kernels.NUMBA_ENABLED:
        print("numba is disabled (LAYOUTPRIOR_NUMBA=0); nothing to compare", file=sys.stderr)
        return 1

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<30}{'numba s':>12}{'fallback s':>12}{'speedup':>10}")
    for name, fast, slow, fargs in cases(rng):
        f_val, s_val = fast(*fargs), slow(*fargs)
        if not np.isclose(f_val, s_val, rtol=1e-12, atol=0):
            raise SystemExit(f"{name}: paths disagree ({f_val} vs {s_val})")
        # best of N, compile time already paid above
        t_fast = min(timeit.repeat(lambda: fast(*fargs), number=1, repeat=args.repeat))
        t_slow = min(timeit.repeat(lambda: slow(*fargs), number=1, repeat=max(1, args.repeat // 2)))
        print(f"{name:<30}{t_fast:>12.4f}{t_slow:>12.4f}{t_slow / t_fast:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
