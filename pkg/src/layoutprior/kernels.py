"""Hot inner loops: string edit distance, ordered tree edit distance, RBF sums.

Each kernel has a numba-compiled form and a pure numpy/Python form; the
public names below are bound to one or the other at import time according to
:data:`layoutprior._accel.NUMBA_ENABLED`.
"""

import numpy as np

from ._accel import NUMBA_ENABLED, jit

__all__ = [
    "NUMBA_ENABLED",
    "levenshtein",
    "zhang_shasha",
    "rbf_sum",
    "levenshtein_numpy",
    "rbf_sum_numpy",
]


# --------------------------------------------------------------------------
# Levenshtein


@jit
def _levenshtein_loop(a, b):
    n = a.shape[0]
    m = b.shape[0]
    if n == 0:
        return m
    if m == 0:
        return n
    prev = np.arange(m + 1).astype(np.int64)
    cur = np.empty(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1] + (0 if ai == b[j - 1] else 1)
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            cur[j] = best
        prev, cur = cur, prev
    return prev[m]


def levenshtein_numpy(a, b):
    """Row-vectorised Levenshtein.

    The in-row insertion chain ``cur[j] = min(t[j], cur[j-1] + 1)`` unrolls to
    ``j + cummin(t[k] - k)``, so each row is a handful of array ops.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    n, m = a.shape[0], b.shape[0]
    if n == 0:
        return m
    if m == 0:
        return n
    idx = np.arange(m + 1, dtype=np.int64)
    prev = idx.copy()
    t = np.empty(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cost = (b != a[i - 1]).astype(np.int64)
        t[0] = i
        np.minimum(prev[1:] + 1, prev[:-1] + cost, out=t[1:])
        prev = idx + np.minimum.accumulate(t - idx)
    return int(prev[m])


def levenshtein(a, b):
    """Unit-cost edit distance between two int64 sequences."""
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    if NUMBA_ENABLED:
        return int(_levenshtein_loop(a, b))
    return levenshtein_numpy(a, b)


# --------------------------------------------------------------------------
# Zhang-Shasha ordered tree edit distance, unit costs.
#
# Trees arrive in postorder: ``labels[k]`` is an interned label id and
# ``lml[k]`` the postorder index of node k's leftmost leaf descendant.


@jit
def zhang_shasha(labels1, lml1, keyroots1, labels2, lml2, keyroots2):
    n1 = labels1.shape[0]
    n2 = labels2.shape[0]
    if n1 == 0:
        return n2
    if n2 == 0:
        return n1
    td = np.zeros((n1, n2), dtype=np.int64)
    fd = np.zeros((n1 + 1, n2 + 1), dtype=np.int64)
    for ki in range(keyroots1.shape[0]):
        i = keyroots1[ki]
        li = lml1[i]
        for kj in range(keyroots2.shape[0]):
            j = keyroots2[kj]
            lj = lml2[j]
            fd[0, 0] = 0
            for x in range(li, i + 1):
                fd[x - li + 1, 0] = fd[x - li, 0] + 1
            for y in range(lj, j + 1):
                fd[0, y - lj + 1] = fd[0, y - lj] + 1
            for x in range(li, i + 1):
                dx = x - li + 1
                for y in range(lj, j + 1):
                    dy = y - lj + 1
                    best = fd[dx - 1, dy] + 1
                    if fd[dx, dy - 1] + 1 < best:
                        best = fd[dx, dy - 1] + 1
                    if lml1[x] == li and lml2[y] == lj:
                        sub = fd[dx - 1, dy - 1] + (0 if labels1[x] == labels2[y] else 1)
                        if sub < best:
                            best = sub
                        fd[dx, dy] = best
                        td[x, y] = best
                    else:
                        sub = fd[lml1[x] - li, lml2[y] - lj] + td[x, y]
                        if sub < best:
                            best = sub
                        fd[dx, dy] = best
    return td[n1 - 1, n2 - 1]


# --------------------------------------------------------------------------
# RBF kernel sums for MMD


@jit
def _rbf_sum_loop(a, b, gamma, skip_diagonal):
    total = 0.0
    n = a.shape[0]
    m = b.shape[0]
    d = a.shape[1]
    for i in range(n):
        row = 0.0
        for j in range(m):
            if skip_diagonal and i == j:
                continue
            sq = 0.0
            for k in range(d):
                diff = a[i, k] - b[j, k]
                sq += diff * diff
            row += np.exp(-gamma * sq)
        total += row
    return total


def rbf_sum_numpy(a, b, gamma, skip_diagonal=False, block_bytes=1 << 25):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, d = a.shape
    m = b.shape[0]
    step = max(1, block_bytes // max(1, 8 * m * d))
    total = 0.0
    for start in range(0, n, step):
        blk = a[start : start + step]
        sq = ((blk[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
        k = np.exp(-gamma * sq)
        if skip_diagonal:
            rows = np.arange(blk.shape[0])
            cols = rows + start
            keep = cols < m
            k[rows[keep], cols[keep]] = 0.0
        total += float(k.sum(axis=1).sum())
    return total


def rbf_sum(a, b, gamma, skip_diagonal=False):
    """Sum of ``exp(-gamma * |a_i - b_j|^2)`` over all (i, j)."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if NUMBA_ENABLED:
        return float(_rbf_sum_loop(a, b, float(gamma), bool(skip_diagonal)))
    return rbf_sum_numpy(a, b, gamma, skip_diagonal)
