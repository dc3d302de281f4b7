"""Block triangular form from the strongly connected components of the matrix graph."""

from __future__ import annotations

import numpy as np
from numba import njit

from ..errors import InputError
from ..sparse import CscMatrix, Permutation


@njit(cache=True, nogil=True)
def _tarjan(n, cp, ri):
    """Iterative Tarjan on edges ``j -> i`` for every entry ``(i, j)``.

    Components are numbered in completion order, which is a valid
    block upper triangular order.
    """
    index = np.full(n, -1, np.int64)
    low = np.zeros(n, np.int64)
    onstack = np.zeros(n, np.bool_)
    sstack = np.empty(n, np.int64)
    cstack = np.empty(n, np.int64)
    it = np.empty(n, np.int64)
    comp = np.full(n, -1, np.int64)
    counter = 0
    ncomp = 0
    stop = 0
    for s in range(n):
        if index[s] >= 0:
            continue
        index[s] = counter
        low[s] = counter
        counter += 1
        sstack[stop] = s
        stop += 1
        onstack[s] = True
        ctop = 0
        cstack[0] = s
        it[s] = cp[s]
        while ctop >= 0:
            v = cstack[ctop]
            if it[v] < cp[v + 1]:
                w = ri[it[v]]
                it[v] += 1
                if index[w] < 0:
                    index[w] = counter
                    low[w] = counter
                    counter += 1
                    sstack[stop] = w
                    stop += 1
                    onstack[w] = True
                    ctop += 1
                    cstack[ctop] = w
                    it[w] = cp[w]
                elif onstack[w] and index[w] < low[v]:
                    low[v] = index[w]
            else:
                ctop -= 1
                if ctop >= 0:
                    u = cstack[ctop]
                    if low[v] < low[u]:
                        low[u] = low[v]
                if low[v] == index[v]:
                    while True:
                        stop -= 1
                        x = sstack[stop]
                        onstack[x] = False
                        comp[x] = ncomp
                        if x == v:
                            break
                    ncomp += 1
    return comp, ncomp


def scc_labels(a: CscMatrix) -> tuple[np.ndarray, int]:
    comp, ncomp = _tarjan(a.ncols, a.col_ptr, a.row_idx)
    return comp, int(ncomp)


def btf_scc(a: CscMatrix) -> tuple[Permutation, np.ndarray]:
    """Symmetric permutation to block upper triangular form.

    ``a`` should already have a zero-free diagonal.  Returns the
    permutation and the offsets delimiting the diagonal blocks.
    """
    if a.nrows != a.ncols:
        raise InputError(f"block triangular form needs a square matrix, got {a.shape}")
    comp, ncomp = scc_labels(a)
    order = np.argsort(comp, kind="stable")
    offsets = np.zeros(ncomp + 1, dtype=np.int64)
    np.cumsum(np.bincount(comp, minlength=ncomp), out=offsets[1:])
    return Permutation.from_order(order), offsets
