"""Left-looking Gilbert-Peierls kernels.

Every column is computed by a depth-first search over the graph of the
already computed ``L`` columns (giving the fill pattern in topological
order), a sparse unit-lower-triangular solve and a threshold pivot
choice.  The compiled kernels work on a *panel*: a contiguous range of
pivot rows ``[lo, hi)`` whose columns may also carry rows outside the
range.  Out-of-range rows never pivot; they simply accumulate ``L``
entries.  The same kernel therefore factors a standalone block, a
group of independent blocks, a nested-dissection leaf with its coupling
rows, or one window of separator columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import InputError, SingularMatrixError
from .sparse import CscMatrix, Permutation

GROWTH = 1.5


# ---------------------------------------------------------------- helpers

@njit(cache=True, nogil=True)
def _grow_int(a, used, need):
    cap = max(int(a.size * GROWTH) + 1, used + need)
    b = np.empty(cap, np.int64)
    b[:used] = a[:used]
    return b


@njit(cache=True, nogil=True)
def _grow_float(a, used, need):
    cap = max(int(a.size * GROWTH) + 1, used + need)
    b = np.empty(cap, np.float64)
    b[:used] = a[:used]
    return b


@njit(cache=True, nogil=True)
def sort_columns(cp, ri, vx):
    """Sort row indices (and values) inside every column, in place."""
    for j in range(cp.size - 1):
        lo = cp[j]
        hi = cp[j + 1]
        if hi - lo < 2:
            continue
        seg = ri[lo:hi]
        ok = True
        for t in range(1, hi - lo):
            if seg[t] < seg[t - 1]:
                ok = False
                break
        if ok:
            continue
        order = np.argsort(seg, kind="mergesort")
        r2 = seg[order].copy()
        v2 = vx[lo:hi][order].copy()
        ri[lo:hi] = r2
        vx[lo:hi] = v2


# ------------------------------------------------------ the numeric panel

@njit(cache=True, nogil=True)
def gp_panel(icp, iri, ivx, lo, hi, kcol0, pinv, Lp, Li, Lx, Up, Ui, Ux,
             tol, blk, abort_on_singular):
    """Factor the input columns as panel columns ``kcol0, kcol0+1, ...``.

    Rows are block coordinates.  Column ``c`` of the input becomes global
    column ``lo + kcol0 + c`` and its preferred (diagonal) pivot row has
    the same index.  ``Lp``/``Up`` are indexed by panel column and must
    hold the current fill at ``kcol0``.  ``L`` rows are stored unpermuted,
    ``U`` rows as global pivot steps.  ``blk`` holds panel-local block
    boundaries used to skip the rest of a singular block when
    ``abort_on_singular`` is false.

    Returns ``(Li, Lx, Ui, Ux, reallocs, singular_cols, ops)``.
    """
    m = pinv.size
    ncols = icp.size - 1
    x = np.zeros(m)
    mark = np.full(m, -1, np.int64)
    stack = np.empty(m + 1, np.int64)
    sptr = np.empty(m + 1, np.int64)
    topo = np.empty(m, np.int64)
    other = np.empty(m, np.int64)
    sing = np.empty(0, np.int64)
    singl = []
    reallocs = 0
    ops = 0
    lnz = Lp[kcol0]
    unz = Up[kcol0]
    c = 0
    while c < ncols:
        kk = kcol0 + c
        k = lo + kk
        ntop = m
        nother = 0
        # symbolic: reach of the input pattern through the L graph
        for p in range(icp[c], icp[c + 1]):
            r = iri[p]
            if mark[r] == k:
                continue
            mark[r] = k
            if r < lo or r >= hi or pinv[r] < 0:
                other[nother] = r
                nother += 1
                continue
            top = 0
            stack[0] = r
            sptr[0] = Lp[pinv[r] - lo]
            while top >= 0:
                j = stack[top]
                pend = Lp[pinv[j] - lo + 1]
                q = sptr[top]
                pushed = False
                while q < pend:
                    i = Li[q]
                    q += 1
                    ops += 1
                    if mark[i] == k:
                        continue
                    mark[i] = k
                    if i >= lo and i < hi and pinv[i] >= 0:
                        sptr[top] = q
                        top += 1
                        stack[top] = i
                        sptr[top] = Lp[pinv[i] - lo]
                        pushed = True
                        break
                    other[nother] = i
                    nother += 1
                if pushed:
                    continue
                top -= 1
                ntop -= 1
                topo[ntop] = j
        # numeric: sparse triangular solve in topological order
        for t in range(ntop, m):
            x[topo[t]] = 0.0
        for t in range(nother):
            x[other[t]] = 0.0
        for p in range(icp[c], icp[c + 1]):
            x[iri[p]] = ivx[p]
        for t in range(ntop, m):
            j = topo[t]
            xj = x[j]
            col = pinv[j] - lo
            for q in range(Lp[col], Lp[col + 1]):
                x[Li[q]] -= Lx[q] * xj
            ops += Lp[col + 1] - Lp[col]
        ops += nother
        # threshold pivot among non-pivotal rows of the panel
        best = -1
        vmax = -1.0
        for t in range(nother):
            r = other[t]
            if r >= lo and r < hi:
                v = abs(x[r])
                if v > vmax or (v == vmax and r < best):
                    vmax = v
                    best = r
        if best >= 0 and mark[k] == k and pinv[k] < 0 and x[k] != 0.0:
            if abs(x[k]) >= tol * vmax:
                best = k
        if best < 0 or not (vmax > 0.0):
            singl.append(k)
            if abort_on_singular:
                sing = np.array(singl, dtype=np.int64)
                Lp[kk + 1] = lnz
                Up[kk + 1] = unz
                return Li, Lx, Ui, Ux, reallocs, sing, ops
            # give the rest of this block trivial columns and move on
            b = 0
            while blk[b + 1] <= kk:
                b += 1
            bend = blk[b + 1]
            nrest = bend - kk
            if unz + nrest > Ui.size:
                Ui = _grow_int(Ui, unz, nrest)
                Ux = _grow_float(Ux, unz, nrest)
                reallocs += 1
            r = lo + blk[b]
            for kk2 in range(kk, bend):
                while pinv[r] >= 0:
                    r += 1
                pinv[r] = lo + kk2
                Ui[unz] = lo + kk2
                Ux[unz] = 0.0
                unz += 1
                Lp[kk2 + 1] = lnz
                Up[kk2 + 1] = unz
            c = bend - kcol0
            continue
        piv = x[best]
        nu = m - ntop
        if unz + nu + 1 > Ui.size:
            Ui = _grow_int(Ui, unz, nu + 1)
            Ux = _grow_float(Ux, unz, nu + 1)
            reallocs += 1
        for t in range(ntop, m):
            j = topo[t]
            Ui[unz] = pinv[j]
            Ux[unz] = x[j]
            unz += 1
        Ui[unz] = k
        Ux[unz] = piv
        unz += 1
        if lnz + nother > Li.size:
            Li = _grow_int(Li, lnz, nother)
            Lx = _grow_float(Lx, lnz, nother)
            reallocs += 1
        for t in range(nother):
            r = other[t]
            if r != best:
                Li[lnz] = r
                Lx[lnz] = x[r] / piv
                lnz += 1
        pinv[best] = k
        Lp[kk + 1] = lnz
        Up[kk + 1] = unz
        c += 1
    if len(singl) > 0:
        sing = np.array(singl, dtype=np.int64)
    return Li, Lx, Ui, Ux, reallocs, sing, ops


@njit(cache=True, nogil=True)
def lower_solve_panel(icp, iri, ivx, lo, hi, pinv, Lp, Li, Lx, ucap, ccap):
    """Solve with a finished panel's unit ``L`` for every input column.

    Input rows must lie in ``[lo, hi)``.  Rows of the panel produce ``U``
    entries (indexed by pivot step); rows outside it receive
    ``-L_out * u`` and are returned as the contribution.

    Returns ``(ucp, ui, ux, ccp, ci, cx, reallocs)``.
    """
    m = pinv.size
    ncols = icp.size - 1
    x = np.zeros(m)
    mark = np.full(m, -1, np.int64)
    stack = np.empty(m + 1, np.int64)
    sptr = np.empty(m + 1, np.int64)
    topo = np.empty(m, np.int64)
    other = np.empty(m, np.int64)
    ucp = np.zeros(ncols + 1, np.int64)
    ccp = np.zeros(ncols + 1, np.int64)
    ui = np.empty(max(ucap, 1), np.int64)
    ux = np.empty(max(ucap, 1), np.float64)
    ci = np.empty(max(ccap, 1), np.int64)
    cx = np.empty(max(ccap, 1), np.float64)
    unz = 0
    cnz = 0
    reallocs = 0
    for c in range(ncols):
        ntop = m
        nother = 0
        for p in range(icp[c], icp[c + 1]):
            r = iri[p]
            if mark[r] == c:
                continue
            mark[r] = c
            top = 0
            stack[0] = r
            sptr[0] = Lp[pinv[r] - lo]
            while top >= 0:
                j = stack[top]
                pend = Lp[pinv[j] - lo + 1]
                q = sptr[top]
                pushed = False
                while q < pend:
                    i = Li[q]
                    q += 1
                    if mark[i] == c:
                        continue
                    mark[i] = c
                    if i >= lo and i < hi:
                        sptr[top] = q
                        top += 1
                        stack[top] = i
                        sptr[top] = Lp[pinv[i] - lo]
                        pushed = True
                        break
                    other[nother] = i
                    nother += 1
                if pushed:
                    continue
                top -= 1
                ntop -= 1
                topo[ntop] = j
        for t in range(ntop, m):
            x[topo[t]] = 0.0
        for t in range(nother):
            x[other[t]] = 0.0
        for p in range(icp[c], icp[c + 1]):
            x[iri[p]] = ivx[p]
        for t in range(ntop, m):
            j = topo[t]
            xj = x[j]
            col = pinv[j] - lo
            for q in range(Lp[col], Lp[col + 1]):
                x[Li[q]] -= Lx[q] * xj
        nu = m - ntop
        if unz + nu > ui.size:
            ui = _grow_int(ui, unz, nu)
            ux = _grow_float(ux, unz, nu)
            reallocs += 1
        for t in range(ntop, m):
            j = topo[t]
            ui[unz] = pinv[j]
            ux[unz] = x[j]
            unz += 1
        if cnz + nother > ci.size:
            ci = _grow_int(ci, cnz, nother)
            cx = _grow_float(cx, cnz, nother)
        for t in range(nother):
            r = other[t]
            ci[cnz] = r
            cx[cnz] = x[r]
            cnz += 1
        ucp[c + 1] = unz
        ccp[c + 1] = cnz
    return ucp, ui[:unz], ux[:unz], ccp, ci[:cnz], cx[:cnz], reallocs


@njit(cache=True, nogil=True)
def reduce_window(m, bcp, bri, bvx, c0, c1, r0, r1, kcp, kri, kvx):
    """Gather ``A[r0:r1, c0:c1]`` and add contributions in their given order.

    ``kcp`` has one row per contribution, each holding column offsets into
    the concatenated ``kri``/``kvx``.  Output rows are sorted.
    """
    ncols = c1 - c0
    ncontrib = kcp.shape[0]
    cap = 0
    for c in range(ncols):
        cap += bcp[c0 + c + 1] - bcp[c0 + c]
        for t in range(ncontrib):
            cap += kcp[t, c + 1] - kcp[t, c]
    ocp = np.zeros(ncols + 1, np.int64)
    ori = np.empty(cap, np.int64)
    ovx = np.empty(cap, np.float64)
    x = np.zeros(m)
    mark = np.full(m, -1, np.int64)
    nz = 0
    for c in range(ncols):
        start = nz
        j = c0 + c
        for p in range(bcp[j], bcp[j + 1]):
            r = bri[p]
            if r >= r0 and r < r1:
                mark[r] = c
                x[r] = bvx[p]
                ori[nz] = r
                nz += 1
        for t in range(ncontrib):
            for p in range(kcp[t, c], kcp[t, c + 1]):
                r = kri[p]
                if r >= r0 and r < r1:
                    if mark[r] != c:
                        mark[r] = c
                        x[r] = 0.0
                        ori[nz] = r
                        nz += 1
                    x[r] += kvx[p]
        seg = np.sort(ori[start:nz])
        for t in range(nz - start):
            ori[start + t] = seg[t]
            ovx[start + t] = x[seg[t]]
        ocp[c + 1] = nz
    return ocp, ori[:nz], ovx[:nz]


# ----------------------------------------------------- the symbolic panel

@njit(cache=True, nogil=True)
def symbolic_panel(icp, iri, lo, hi, m):
    """Pattern of a panel factorization without row interchanges.

    Row ``r`` in ``[lo, hi)`` is eliminated at column ``r``.  Returns
    ``(Lp, Li, Up, Ui)`` with ``L`` strictly below the diagonal (rows kept
    in panel order) and ``U`` including the diagonal.
    """
    ncols = icp.size - 1
    mark = np.full(m, -1, np.int64)
    stack = np.empty(m + 1, np.int64)
    sptr = np.empty(m + 1, np.int64)
    topo = np.empty(m, np.int64)
    other = np.empty(m, np.int64)
    Lp = np.zeros(ncols + 1, np.int64)
    Up = np.zeros(ncols + 1, np.int64)
    Li = np.empty(max(icp[ncols], 16), np.int64)
    Ui = np.empty(max(icp[ncols], 16), np.int64)
    lnz = 0
    unz = 0
    for c in range(ncols):
        k = lo + c
        ntop = m
        nother = 0
        for p in range(icp[c], icp[c + 1]):
            r = iri[p]
            if mark[r] == k:
                continue
            mark[r] = k
            if r < lo or r >= k:
                other[nother] = r
                nother += 1
                continue
            top = 0
            stack[0] = r
            sptr[0] = Lp[r - lo]
            while top >= 0:
                j = stack[top]
                pend = Lp[j - lo + 1]
                q = sptr[top]
                pushed = False
                while q < pend:
                    i = Li[q]
                    q += 1
                    if mark[i] == k:
                        continue
                    mark[i] = k
                    if i >= lo and i < k:
                        sptr[top] = q
                        top += 1
                        stack[top] = i
                        sptr[top] = Lp[i - lo]
                        pushed = True
                        break
                    other[nother] = i
                    nother += 1
                if pushed:
                    continue
                top -= 1
                ntop -= 1
                topo[ntop] = j
        nu = m - ntop
        if unz + nu + 1 > Ui.size:
            Ui = _grow_int(Ui, unz, nu + 1)
        for t in range(ntop, m):
            Ui[unz] = topo[t]
            unz += 1
        Ui[unz] = k
        unz += 1
        if lnz + nother > Li.size:
            Li = _grow_int(Li, lnz, nother)
        for t in range(nother):
            r = other[t]
            if r != k:
                Li[lnz] = r
                lnz += 1
        Lp[c + 1] = lnz
        Up[c + 1] = unz
    return Lp, Li[:lnz], Up, Ui[:unz]


# ------------------------------------------------ reference-level pieces

@njit(cache=True, nogil=True)
def _reach(n, lp, li, starts, mark):
    stack = np.empty(n + 1, np.int64)
    sptr = np.empty(n + 1, np.int64)
    out = np.empty(n, np.int64)
    ntop = n
    for s in starts:
        if mark[s]:
            continue
        mark[s] = True
        top = 0
        stack[0] = s
        sptr[0] = lp[s]
        while top >= 0:
            j = stack[top]
            q = sptr[top]
            pushed = False
            while q < lp[j + 1]:
                i = li[q]
                q += 1
                if not mark[i]:
                    mark[i] = True
                    sptr[top] = q
                    top += 1
                    stack[top] = i
                    sptr[top] = lp[i]
                    pushed = True
                    break
            if pushed:
                continue
            top -= 1
            ntop -= 1
            out[ntop] = j
    return out[ntop:].copy()


class SparseAccumulator:
    """Dense value buffer plus the list of rows currently holding values.

    Marks carry a generation stamp so that starting a new column costs
    O(1) instead of O(n).
    """

    def __init__(self, n: int):
        self.n = n
        self.dense_values = np.zeros(n)
        self.pattern: list[int] = []
        self.visited_marks = np.zeros(n, np.int64)
        self.generation = 1

    def clear(self) -> None:
        for r in self.pattern:
            self.dense_values[r] = 0.0
        self.pattern = []
        self.generation += 1

    def scatter(self, rows, values) -> None:
        for r, v in zip(np.asarray(rows).tolist(), np.asarray(values, float).tolist()):
            if self.visited_marks[r] != self.generation:
                self.visited_marks[r] = self.generation
                self.pattern.append(r)
            self.dense_values[r] += v

    def value(self, r: int) -> float:
        return float(self.dense_values[r])

    def items(self) -> list[tuple[int, float]]:
        return [(r, float(self.dense_values[r])) for r in self.pattern]


def reach(l: CscMatrix, col_pattern) -> np.ndarray:
    """Rows reachable from ``col_pattern`` in the graph of ``l``, in topological order."""
    starts = np.asarray(list(col_pattern), np.int64)
    n = l.ncols
    if starts.size and (starts.min() < 0 or starts.max() >= n):
        raise InputError("start index out of range")
    mark = np.zeros(max(n, l.nrows), np.bool_)
    return _reach(n, l.col_ptr, l.row_idx, starts, mark)


def column_solve(l: CscMatrix, spa: SparseAccumulator) -> SparseAccumulator:
    """Unit lower triangular solve on the accumulator's (topological) pattern."""
    pattern = reach(l, spa.pattern)
    extra = [int(r) for r in pattern if spa.visited_marks[r] != spa.generation]
    for r in extra:
        spa.visited_marks[r] = spa.generation
        spa.dense_values[r] = 0.0
    spa.pattern = [int(r) for r in pattern]
    x = spa.dense_values
    for j in spa.pattern:
        xj = x[j]
        if xj == 0.0 or j >= l.ncols:
            continue
        lo, hi = l.col_ptr[j], l.col_ptr[j + 1]
        x[l.row_idx[lo:hi]] -= l.values[lo:hi] * xj
    return spa


def pivot_select(spa: SparseAccumulator, diag_row: int, pivot_tol: float,
                 candidates=None, column: int | None = None) -> int:
    """Threshold partial pivoting with the lowest row index breaking ties."""
    if not 0.0 <= pivot_tol <= 1.0:
        raise InputError(f"pivot tolerance must lie in [0, 1], got {pivot_tol}")
    rows = spa.pattern if candidates is None else [int(r) for r in candidates]
    best, vmax = -1, -1.0
    for r in sorted(rows):
        v = abs(spa.dense_values[r])
        if v > vmax:
            best, vmax = r, v
    if best < 0 or not vmax > 0.0:
        raise SingularMatrixError(diag_row if column is None else column)
    if diag_row in rows:
        d = spa.dense_values[diag_row]
        if d != 0.0 and abs(d) >= pivot_tol * vmax:
            return int(diag_row)
    return int(best)


@dataclass(eq=False)
class LuBlock:
    """``L`` (unit diagonal implicit), ``U`` and the row pivot with ``L U = P A``."""

    L: CscMatrix
    U: CscMatrix
    pivot: Permutation
    reallocs: int = 0
    ops: int = 0

    @property
    def n(self) -> int:
        return self.U.ncols

    @property
    def nnz(self) -> int:
        return self.L.nnz + self.U.nnz

    def solve(self, b) -> np.ndarray:
        y = self.pivot.apply(np.asarray(b, float))
        n = self.n
        L, U = self.L, self.U
        for k in range(n):
            lo, hi = L.col_ptr[k], L.col_ptr[k + 1]
            y[L.row_idx[lo:hi]] -= L.values[lo:hi] * y[k]
        for k in range(n - 1, -1, -1):
            lo, hi = U.col_ptr[k], U.col_ptr[k + 1]
            y[k] /= U.values[hi - 1]
            y[U.row_idx[lo:hi - 1]] -= U.values[lo:hi - 1] * y[k]
        return y


def factor_block_gp(a: CscMatrix, pivot_tol: float = 1e-3,
                    l_cap: int | None = None, u_cap: int | None = None) -> LuBlock:
    """Factor one square block with threshold partial pivoting."""
    if a.nrows != a.ncols:
        raise InputError(f"block must be square, got {a.shape}")
    if not 0.0 <= pivot_tol <= 1.0:
        raise InputError(f"pivot tolerance must lie in [0, 1], got {pivot_tol}")
    n = a.ncols
    pinv = np.full(n, -1, np.int64)
    Lp = np.zeros(n + 1, np.int64)
    Up = np.zeros(n + 1, np.int64)
    lc = max(l_cap if l_cap is not None else a.nnz, 1)
    uc = max(u_cap if u_cap is not None else a.nnz + n, 1)
    Li, Lx = np.empty(lc, np.int64), np.empty(lc)
    Ui, Ux = np.empty(uc, np.int64), np.empty(uc)
    blk = np.array([0, n], np.int64)
    Li, Lx, Ui, Ux, reallocs, sing, ops = gp_panel(
        a.col_ptr, a.row_idx, a.values, 0, n, 0, pinv, Lp, Li, Lx, Up, Ui, Ux,
        float(pivot_tol), blk, True)
    if sing.size:
        raise SingularMatrixError(int(sing[0]))
    li = pinv[Li[:Lp[n]]]
    lx = Lx[:Lp[n]].copy()
    ui = Ui[:Up[n]].copy()
    ux = Ux[:Up[n]].copy()
    sort_columns(Lp, li, lx)
    sort_columns(Up, ui, ux)
    return LuBlock(CscMatrix(n, n, Lp, li, lx), CscMatrix(n, n, Up, ui, ux),
                   Permutation.from_forward(pinv), int(reallocs), int(ops))


def block_spmv_pattern(l_block: CscMatrix, u_col) -> tuple[np.ndarray, np.ndarray]:
    """Sparse product ``l_block @ u`` for a sparse column ``u = (indices, values)``.

    The result pattern is the exact union of the contributing columns.
    """
    idx, vals = u_col
    idx = np.asarray(idx, np.int64)
    vals = np.asarray(vals, np.float64)
    if idx.size and (idx.min() < 0 or idx.max() >= l_block.ncols):
        raise InputError("column index out of range for the block")
    rows, prods = [], []
    for j, v in zip(idx.tolist(), vals.tolist()):
        r, lv = l_block.column(j)
        rows.append(r)
        prods.append(lv * v)
    if not rows:
        return np.zeros(0, np.int64), np.zeros(0)
    r = np.concatenate(rows)
    p = np.concatenate(prods)
    order = np.argsort(r, kind="stable")
    r, p = r[order], p[order]
    if r.size == 0:
        return r, p
    starts = np.nonzero(np.concatenate([[True], r[1:] != r[:-1]]))[0]
    return r[starts], np.add.reduceat(p, starts)
