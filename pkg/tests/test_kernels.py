"""The numba and fallback paths of every kernel agree exactly."""

import os
import subprocess
import sys

import numpy as np
import pytest
from oracles import levenshtein_table

from layoutprior import kernels
from layoutprior.kernels import levenshtein_numpy, rbf_sum_numpy
from layoutprior.teds import TableTree, tree_edit_distance

needs_numba = pytest.mark.skipif(not kernels.NUMBA_ENABLED, reason="numba disabled")


def test_levenshtein_paths_agree():
    rng = np.random.default_rng(0)
    for _ in range(300):
        a = rng.integers(0, 4, rng.integers(0, 30))
        b = rng.integers(0, 4, rng.integers(0, 30))
        expected = levenshtein_table(a.tolist(), b.tolist())
        assert levenshtein_numpy(a, b) == expected
        assert kernels.levenshtein(a, b) == expected


@needs_numba
def test_levenshtein_loop_py_func():
    a, b = np.array([1, 2, 3, 4]), np.array([2, 3, 5])
    assert kernels._levenshtein_loop.py_func(a, b) == kernels._levenshtein_loop(a, b) == 2


@pytest.mark.parametrize("skip", [False, True])
def test_rbf_paths_agree(skip):
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(37, 5)), rng.normal(size=(29, 5))
    for x, y in ((a, b), (a, a)):
        naive = sum(
            np.exp(-0.4 * np.sum((x[i] - y[j]) ** 2)) for i in range(len(x)) for j in range(len(y)) if not (skip and i == j)
        )
        assert kernels.rbf_sum(x, y, 0.4, skip) == pytest.approx(naive, rel=1e-12)
        assert rbf_sum_numpy(x, y, 0.4, skip, block_bytes=512) == pytest.approx(naive, rel=1e-12)


@needs_numba
def test_zhang_shasha_py_func_agrees():
    rng = np.random.default_rng(2)

    def tree(depth):
        kids = () if depth == 0 else tuple(tree(depth - 1) for _ in range(int(rng.integers(0, 3))))
        return TableTree(int(rng.integers(0, 3)), kids)

    from layoutprior.teds import _arrays

    for _ in range(50):
        t1, t2 = tree(3), tree(3)
        ids = {}
        args = (*_arrays(t1, ids), *_arrays(t2, ids))
        assert kernels.zhang_shasha.py_func(*args) == kernels.zhang_shasha(*args) == tree_edit_distance(t1, t2)


def test_env_flag_disables_numba():
    code = "from layoutprior import kernels; print(kernels.NUMBA_ENABLED, kernels.levenshtein([1, 2, 3], [1, 3]))"
    env = dict(os.environ, LAYOUTPRIOR_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "1"]
