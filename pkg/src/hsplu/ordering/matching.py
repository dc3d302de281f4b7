"""Bottleneck maximum-cardinality matching (zero-free diagonal with large entries)."""

from __future__ import annotations

import numpy as np
from numba import njit

from ..errors import InputError, StructuralSingularityError
from ..sparse import CscMatrix, Permutation


@njit(cache=True, nogil=True)
def _hopcroft_karp(n, cp, ri, w, thr, match_col, match_row):
    """Grow ``match_col``/``match_row`` in place using only edges with ``w >= thr``.

    Returns the final cardinality.
    """
    inf = n + 1
    dist = np.empty(n, np.int64)
    queue = np.empty(n, np.int64)
    it = np.empty(n, np.int64)
    stack = np.empty(n, np.int64)
    via = np.empty(n, np.int64)
    card = 0
    for j in range(n):
        if match_col[j] >= 0:
            card += 1
    while True:
        head = 0
        tail = 0
        for j in range(n):
            if match_col[j] < 0:
                dist[j] = 0
                queue[tail] = j
                tail += 1
            else:
                dist[j] = inf
        found = False
        while head < tail:
            j = queue[head]
            head += 1
            for p in range(cp[j], cp[j + 1]):
                if w[p] < thr:
                    continue
                j2 = match_row[ri[p]]
                if j2 < 0:
                    found = True
                elif dist[j2] == inf:
                    dist[j2] = dist[j] + 1
                    queue[tail] = j2
                    tail += 1
        if not found:
            break
        for j in range(n):
            it[j] = cp[j]
        grew = False
        for j0 in range(n):
            if match_col[j0] >= 0 or dist[j0] != 0:
                continue
            top = 0
            stack[0] = j0
            done = False
            while top >= 0 and not done:
                j = stack[top]
                pushed = False
                while it[j] < cp[j + 1]:
                    p = it[j]
                    it[j] += 1
                    if w[p] < thr:
                        continue
                    i = ri[p]
                    j2 = match_row[i]
                    if j2 < 0:
                        via[j] = i
                        # augment along the stack
                        for t in range(top + 1):
                            jj = stack[t]
                            match_col[jj] = via[jj]
                            match_row[via[jj]] = jj
                        card += 1
                        grew = True
                        done = True
                        break
                    if dist[j2] == dist[j] + 1:
                        via[j] = i
                        top += 1
                        stack[top] = j2
                        pushed = True
                        break
                if done or pushed:
                    continue
                dist[j] = inf
                top -= 1
        if not grew:
            break
    return card


@njit(cache=True, nogil=True)
def _seed(n, cp, ri, w, thr, warm_col, match_col, match_row):
    """Admissible diagonal entries first, then admissible matches from ``warm_col``."""
    for j in range(n):
        match_col[j] = -1
    for i in range(n):
        match_row[i] = -1
    for j in range(n):
        for p in range(cp[j], cp[j + 1]):
            if ri[p] == j and w[p] >= thr:
                match_col[j] = j
                match_row[j] = j
                break
    for j in range(n):
        i = warm_col[j]
        if match_col[j] >= 0 or i < 0 or match_row[i] >= 0:
            continue
        for p in range(cp[j], cp[j + 1]):
            if ri[p] == i:
                if w[p] >= thr:
                    match_col[j] = i
                    match_row[i] = j
                break


def _matching_at(a: CscMatrix, w: np.ndarray, thr: float, warm=None):
    n = a.ncols
    mc = np.empty(n, np.int64)
    mr = np.empty(n, np.int64)
    warm_col = np.full(n, -1, np.int64) if warm is None else warm[0]
    _seed(n, a.col_ptr, a.row_idx, w, thr, warm_col, mc, mr)
    card = _hopcroft_karp(n, a.col_ptr, a.row_idx, w, thr, mc, mr)
    return card, mc, mr


def bottleneck_value(a: CscMatrix, rowp: Permutation) -> float:
    """Smallest diagonal magnitude of ``permute(a, rowp, identity)``."""
    d = np.zeros(a.ncols)
    cols = a.col_indices()
    new_rows = rowp.forward[a.row_idx]
    on = new_rows == cols
    d[cols[on]] = np.abs(a.values[on])
    present = np.zeros(a.ncols, bool)
    present[cols[on]] = True
    if not present.all():
        return 0.0
    return float(d.min()) if d.size else np.inf


def mwcm(a: CscMatrix) -> Permutation:
    """Row permutation giving a zero-free diagonal that maximizes the smallest |diagonal|.

    Threshold search over the distinct entry magnitudes; each step tests
    for a perfect matching restricted to entries at or above the threshold.
    """
    if a.nrows != a.ncols:
        raise InputError(f"matching needs a square matrix, got {a.nrows}x{a.ncols}")
    n = a.ncols
    if n == 0:
        return Permutation.identity(0)
    w = np.abs(a.values)
    card, mc, mr = _matching_at(a, w, -np.inf)
    if card < n:
        raise StructuralSingularityError(n, int(card))
    levels = np.unique(w)
    lo, hi = 0, levels.size - 1          # levels[lo] is always feasible
    best = (mc, mr)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        card, mc2, mr2 = _matching_at(a, w, levels[mid], warm=best)
        if card == n:
            lo = mid
            best = (mc2, mr2)
        else:
            hi = mid - 1
    # final pass seeded from the diagonal so admissible diagonals are kept
    card, mc, mr = _matching_at(a, w, levels[lo], warm=best)
    if card < n:  # pragma: no cover - levels[lo] was proven feasible
        mc, mr = best
    forward = np.empty(n, np.int64)
    forward[mc] = np.arange(n, dtype=np.int64)
    return Permutation.from_forward(forward)
