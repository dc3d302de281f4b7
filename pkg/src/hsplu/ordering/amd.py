"""Approximate minimum degree ordering on the graph of ``A + A^T``.

Quotient-graph elimination with approximate external degrees, element
absorption (including aggressive absorption), mass elimination,
hash-based supervariable detection and in-place workspace compaction,
following the classic AMD scheme of Amestoy, Davis and Duff.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ..errors import InputError
from ..sparse import CscMatrix, Permutation
from .graph import symmetric_adjacency

EMPTY = -1
DENSE_ALPHA = 10.0


@njit(cache=True, inline="always")
def _flip(i):
    return -i - 2


@njit(cache=True, nogil=True)
def _clear_flag(wflg, wbig, W, n):
    if wflg < 2 or wflg >= wbig:
        for x in range(n):
            if W[x] != 0:
                W[x] = 1
        wflg = 2
    return wflg


@njit(cache=True, nogil=True)
def _emit_chain(i, chain_next, order, pos):
    j = i
    while j != EMPTY:
        order[pos] = j
        pos += 1
        j = chain_next[j]
    return pos


@njit(cache=True, nogil=True)
def amd_core(n, Pe, Iw, Len, pfree, alpha):
    """Run AMD on the adjacency held in ``Iw`` (lists at ``Pe``, lengths ``Len``).

    ``Iw`` must have room beyond ``pfree`` for new elements (at least ``n``
    slots).  Returns ``(order, ncompactions)`` where ``order[k]`` is the
    vertex eliminated at step ``k``.
    """
    iwlen = Iw.size
    Nv = np.ones(n, np.int64)
    Next = np.full(n, EMPTY, np.int64)
    Last = np.full(n, EMPTY, np.int64)
    Head = np.full(n, EMPTY, np.int64)
    Elen = np.zeros(n, np.int64)
    Degree = Len.copy()
    W = np.ones(n, np.int64)
    chain_next = np.full(n, EMPTY, np.int64)
    chain_tail = np.arange(n)
    order = np.empty(n, np.int64)
    pos = 0

    if alpha < 0:
        dense = n - 2
    else:
        dense = int(alpha * np.sqrt(n))
    dense = max(16, dense)
    dense = min(n, dense)

    wbig = np.iinfo(np.int64).max - n
    wflg = _clear_flag(0, wbig, W, n)
    nel = 0
    mindeg = 0
    lemax = 0
    ncmpa = 0

    # empty rows go first, dense rows last
    ndense = 0
    is_dense = np.zeros(n, np.bool_)
    for i in range(n):
        deg = Degree[i]
        if deg == 0:
            Elen[i] = _flip(1)
            nel += 1
            Pe[i] = EMPTY
            W[i] = 0
            order[pos] = i
            pos += 1
        elif deg > dense:
            ndense += 1
            Nv[i] = 0
            Elen[i] = EMPTY
            nel += 1
            Pe[i] = EMPTY
            is_dense[i] = True
    # insert in decreasing index so the lowest index heads each list
    for i in range(n - 1, -1, -1):
        if Elen[i] == 0 and Nv[i] > 0:
            deg = Degree[i]
            inext = Head[deg]
            if inext != EMPTY:
                Last[inext] = i
            Next[i] = inext
            Head[deg] = i

    while nel < n:
        # select pivot of minimum approximate degree
        me = EMPTY
        deg = mindeg
        while deg < n:
            me = Head[deg]
            if me != EMPTY:
                break
            deg += 1
        mindeg = deg
        inext = Next[me]
        if inext != EMPTY:
            Last[inext] = EMPTY
        Head[deg] = inext

        elenme = Elen[me]
        nvpiv = Nv[me]
        nel += nvpiv
        pos = _emit_chain(me, chain_next, order, pos)

        # construct the new element Lme
        Nv[me] = -nvpiv
        degme = 0
        if elenme == 0:
            pme1 = Pe[me]
            pme2 = pme1 - 1
            for p in range(pme1, pme1 + Len[me]):
                i = Iw[p]
                nvi = Nv[i]
                if nvi > 0:
                    degme += nvi
                    Nv[i] = -nvi
                    pme2 += 1
                    Iw[pme2] = i
                    ilast = Last[i]
                    inext = Next[i]
                    if inext != EMPTY:
                        Last[inext] = ilast
                    if ilast != EMPTY:
                        Next[ilast] = inext
                    else:
                        Head[Degree[i]] = inext
        else:
            p = Pe[me]
            pme1 = pfree
            slenme = Len[me] - elenme
            for knt1 in range(1, elenme + 2):
                if knt1 > elenme:
                    e = me
                    pj = p
                    ln = slenme
                else:
                    e = Iw[p]
                    p += 1
                    pj = Pe[e]
                    ln = Len[e]
                for knt2 in range(1, ln + 1):
                    i = Iw[pj]
                    pj += 1
                    nvi = Nv[i]
                    if nvi > 0:
                        if pfree >= iwlen:
                            # compact the workspace
                            Pe[me] = p
                            Len[me] -= knt1
                            if Len[me] == 0:
                                Pe[me] = EMPTY
                            Pe[e] = pj
                            Len[e] = ln - knt2
                            if Len[e] == 0:
                                Pe[e] = EMPTY
                            ncmpa += 1
                            for j in range(n):
                                pn = Pe[j]
                                if pn >= 0:
                                    Pe[j] = Iw[pn]
                                    Iw[pn] = _flip(j)
                            psrc = 0
                            pdst = 0
                            pend = pme1 - 1
                            while psrc <= pend:
                                j = _flip(Iw[psrc])
                                psrc += 1
                                if j >= 0:
                                    Iw[pdst] = Pe[j]
                                    Pe[j] = pdst
                                    pdst += 1
                                    lenj = Len[j]
                                    for _ in range(lenj - 1):
                                        Iw[pdst] = Iw[psrc]
                                        pdst += 1
                                        psrc += 1
                            p1 = pdst
                            for psrc in range(pme1, pfree):
                                Iw[pdst] = Iw[psrc]
                                pdst += 1
                            pme1 = p1
                            pfree = pdst
                            pj = Pe[e]
                            p = Pe[me]
                        degme += nvi
                        Nv[i] = -nvi
                        Iw[pfree] = i
                        pfree += 1
                        ilast = Last[i]
                        inext = Next[i]
                        if inext != EMPTY:
                            Last[inext] = ilast
                        if ilast != EMPTY:
                            Next[ilast] = inext
                        else:
                            Head[Degree[i]] = inext
                if e != me:
                    Pe[e] = _flip(me)
                    W[e] = 0
            pme2 = pfree - 1

        Degree[me] = degme
        Pe[me] = pme1
        Len[me] = pme2 - pme1 + 1
        Elen[me] = _flip(nvpiv + degme)
        wflg = _clear_flag(wflg, wbig, W, n)

        # |Le \ Lme| for every element e adjacent to a variable of Lme
        for pme in range(pme1, pme2 + 1):
            i = Iw[pme]
            eln = Elen[i]
            if eln > 0:
                nvi = -Nv[i]
                wnvi = wflg - nvi
                for p in range(Pe[i], Pe[i] + eln):
                    e = Iw[p]
                    we = W[e]
                    if we >= wflg:
                        we -= nvi
                    elif we != 0:
                        we = Degree[e] + wnvi
                    W[e] = we

        # approximate degree update, absorption and mass elimination
        for pme in range(pme1, pme2 + 1):
            i = Iw[pme]
            p1 = Pe[i]
            p2 = p1 + Elen[i] - 1
            pn = p1
            hsh = 0
            deg = 0
            for p in range(p1, p2 + 1):
                e = Iw[p]
                we = W[e]
                if we != 0:
                    dext = we - wflg
                    if dext > 0:
                        deg += dext
                        Iw[pn] = e
                        pn += 1
                        hsh += e
                    else:
                        # aggressive absorption: Le is a subset of Lme
                        Pe[e] = _flip(me)
                        W[e] = 0
            Elen[i] = pn - p1 + 1
            p3 = pn
            p4 = p1 + Len[i]
            for p in range(p2 + 1, p4):
                j = Iw[p]
                nvj = Nv[j]
                if nvj > 0:
                    deg += nvj
                    Iw[pn] = j
                    pn += 1
                    hsh += j
            if Elen[i] == 1 and p3 == pn:
                # mass elimination: i is adjacent only to me
                Pe[i] = _flip(me)
                nvi = -Nv[i]
                degme -= nvi
                nvpiv += nvi
                nel += nvi
                Nv[i] = 0
                Elen[i] = EMPTY
                pos = _emit_chain(i, chain_next, order, pos)
            else:
                if deg < Degree[i]:
                    Degree[i] = deg
                Iw[pn] = Iw[p3]
                Iw[p3] = Iw[p1]
                Iw[p1] = me
                Len[i] = pn - p1 + 1
                hsh = hsh % n
                j = Head[hsh]
                if j <= EMPTY:
                    Next[i] = _flip(j)
                    Head[hsh] = _flip(i)
                else:
                    Next[i] = Last[j]
                    Last[j] = i
                Last[i] = hsh

        Degree[me] = degme
        if degme > lemax:
            lemax = degme
        wflg += lemax
        wflg = _clear_flag(wflg, wbig, W, n)

        # supervariable detection
        for pme in range(pme1, pme2 + 1):
            i = Iw[pme]
            if Nv[i] < 0:
                hsh = Last[i]
                j = Head[hsh]
                if j == EMPTY:
                    i = EMPTY
                elif j < EMPTY:
                    i = _flip(j)
                    Head[hsh] = EMPTY
                else:
                    i = Last[j]
                    Last[j] = EMPTY
                while i != EMPTY and Next[i] != EMPTY:
                    ln = Len[i]
                    eln = Elen[i]
                    for p in range(Pe[i] + 1, Pe[i] + ln):
                        W[Iw[p]] = wflg
                    jlast = i
                    j = Next[i]
                    while j != EMPTY:
                        ok = Len[j] == ln and Elen[j] == eln
                        p = Pe[j] + 1
                        while ok and p <= Pe[j] + ln - 1:
                            if W[Iw[p]] != wflg:
                                ok = False
                            p += 1
                        if ok:
                            # j is indistinguishable from i: absorb it
                            Pe[j] = _flip(i)
                            Nv[i] += Nv[j]
                            Nv[j] = 0
                            Elen[j] = EMPTY
                            chain_next[chain_tail[i]] = j
                            chain_tail[i] = chain_tail[j]
                            j = Next[j]
                            Next[jlast] = j
                        else:
                            jlast = j
                            j = Next[j]
                    wflg += 1
                    i = Next[i]

        # restore degree lists, drop nonprincipal variables from Lme
        p = pme1
        nleft = n - nel
        for pme in range(pme1, pme2 + 1):
            i = Iw[pme]
            nvi = -Nv[i]
            if nvi > 0:
                Nv[i] = nvi
                deg = min(Degree[i] + degme - nvi, nleft - nvi)
                inext = Head[deg]
                if inext != EMPTY:
                    Last[inext] = i
                Next[i] = inext
                Last[i] = EMPTY
                Head[deg] = i
                if deg < mindeg:
                    mindeg = deg
                Degree[i] = deg
                Iw[p] = i
                p += 1
        Nv[me] = nvpiv
        Len[me] = p - pme1
        if Len[me] == 0:
            Pe[me] = EMPTY
            W[me] = 0
        if elenme != 0:
            pfree = p

    for i in range(n):
        if is_dense[i]:
            order[pos] = i
            pos += 1
    return order, ncmpa


def amd_from_adjacency(n: int, xadj: np.ndarray, adj: np.ndarray,
                       iwlen: int | None = None,
                       alpha: float = DENSE_ALPHA) -> tuple[np.ndarray, int]:
    """Order a graph given as CSR adjacency (no self loops)."""
    nz = int(xadj[n])
    if iwlen is None:
        iwlen = nz + nz // 5 + 2 * n
    if iwlen < nz + n:
        raise InputError(f"workspace of {iwlen} is below the minimum {nz + n}")
    Iw = np.empty(max(iwlen, 1), np.int64)
    Iw[:nz] = adj
    Pe = xadj[:n].astype(np.int64).copy()
    Len = np.diff(xadj).astype(np.int64)
    order, ncmp = amd_core(n, Pe, Iw, Len, nz, float(alpha))
    return order, int(ncmp)


def amd_order(a: CscMatrix, alpha: float = DENSE_ALPHA) -> Permutation:
    """Fill-reducing symmetric permutation (``forward[old] = new``)."""
    if a.nrows != a.ncols:
        raise InputError(f"ordering needs a square matrix, got {a.shape}")
    n = a.ncols
    if n == 0:
        return Permutation.identity(0)
    xadj, adj = symmetric_adjacency(a)
    order, _ = amd_from_adjacency(n, xadj, adj, alpha=alpha)
    return Permutation.from_order(order)


@njit(cache=True, nogil=True)
def _block_adjacency(cp, ri, lo, hi):
    """CSR adjacency of ``A[lo:hi, lo:hi] + its transpose`` (local indices, no loops)."""
    m = hi - lo
    deg = np.zeros(m + 1, np.int64)
    for j in range(lo, hi):
        for p in range(cp[j], cp[j + 1]):
            i = ri[p]
            if i >= lo and i < hi and i != j:
                deg[i - lo] += 1
                deg[j - lo] += 1
    xadj = np.zeros(m + 1, np.int64)
    for k in range(m):
        xadj[k + 1] = xadj[k] + deg[k]
    fill = xadj[:m].copy()
    raw = np.empty(xadj[m], np.int64)
    for j in range(lo, hi):
        for p in range(cp[j], cp[j + 1]):
            i = ri[p]
            if i >= lo and i < hi and i != j:
                raw[fill[i - lo]] = j - lo
                fill[i - lo] += 1
                raw[fill[j - lo]] = i - lo
                fill[j - lo] += 1
    # sort and deduplicate each list
    out_x = np.zeros(m + 1, np.int64)
    out = np.empty(xadj[m], np.int64)
    q = 0
    for k in range(m):
        seg = np.sort(raw[xadj[k]:xadj[k + 1]])
        prev = -1
        for v in seg:
            if v != prev:
                out[q] = v
                q += 1
                prev = v
        out_x[k + 1] = q
    return out_x, out[:q]


@njit(cache=True, nogil=True)
def _amd_blocks(cp, ri, offsets, alpha):
    """AMD inside every diagonal block; returns a global order array."""
    n = offsets[-1]
    order = np.empty(n, np.int64)
    for b in range(offsets.size - 1):
        lo = offsets[b]
        hi = offsets[b + 1]
        m = hi - lo
        if m <= 2:
            for k in range(m):
                order[lo + k] = lo + k
            continue
        xadj, adj = _block_adjacency(cp, ri, lo, hi)
        nz = xadj[m]
        Iw = np.empty(nz + nz // 5 + 2 * m, np.int64)
        Iw[:nz] = adj
        Pe = xadj[:m].copy()
        Len = np.empty(m, np.int64)
        for k in range(m):
            Len[k] = xadj[k + 1] - xadj[k]
        local, _ = amd_core(m, Pe, Iw, Len, nz, alpha)
        for k in range(m):
            order[lo + k] = lo + local[k]
    return order


def amd_diagonal_blocks(a: CscMatrix, offsets: np.ndarray,
                        alpha: float = DENSE_ALPHA) -> Permutation:
    """Symmetric permutation applying AMD independently inside each diagonal block."""
    order = _amd_blocks(a.col_ptr, a.row_idx, np.asarray(offsets, np.int64), float(alpha))
    return Permutation.from_order(order)
