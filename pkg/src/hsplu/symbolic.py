"""Symbolic analysis: orderings, block structure, nonzero estimates and the task plan.

The coarse level splits the matched matrix into its block triangular
form.  Small diagonal blocks (FineBTF) are ordered with AMD, counted
exactly and spread over workers by longest-processing-time.  Each large
block (FineND) is dissected into a separator tree whose 2D blocks get
nonzero estimates: exact elimination patterns on leaves, elimination
tree walks for the upper blocks and dense row-interval bounds for the
separator products.
"""

from __future__ import annotations

import heapq
import pickle
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from numba import njit

from .errors import InputError, PatternMismatchError
from .gp import symbolic_panel
from .ordering.amd import amd_diagonal_blocks
from .ordering.btf import btf_scc
from .ordering.matching import mwcm
from .ordering.nd import NdTree, nd_from_adjacency
from .ordering.graph import symmetric_adjacency
from .schedule import (DependencyTree, Task, build_dependency_tree, build_schedule,
                       default_windows)
from .sparse import (CscMatrix, Permutation, permute, permute_with_map,
                     submatrix_with_map)

FINE_BTF = 0
FINE_ND = 1
KIND_NAMES = {FINE_BTF: "FineBTF", FINE_ND: "FineND"}

HEADROOM = 1.2
DEFAULT_WINDOW = 64
DEFAULT_LEAVES = 8
PLAN_MAGIC = b"HSPLU-PLAN"
PLAN_VERSION = 1

_analyze_calls = 0


def analyze_calls() -> int:
    """How many times :func:`analyze` has run in this process."""
    return _analyze_calls


def default_nd_threshold(p: int) -> int:
    return max(1000, 2 * p)


# ------------------------------------------------------ elimination trees

@dataclass(frozen=True, eq=False)
class EliminationTree:
    parent: np.ndarray

    @property
    def n(self) -> int:
        return int(self.parent.size)

    def roots(self) -> np.ndarray:
        return np.nonzero(self.parent < 0)[0]

    def path_to_root(self, i: int) -> list[int]:
        out = []
        while i >= 0:
            out.append(int(i))
            i = int(self.parent[i])
        return out


@njit(cache=True, nogil=True)
def _liu(n, nrows, cp, ri, ata):
    parent = np.full(n, -1, np.int64)
    anc = np.full(n, -1, np.int64)
    prev = np.full(nrows, -1, np.int64)
    for k in range(n):
        for p in range(cp[k], cp[k + 1]):
            r = ri[p]
            i = prev[r] if ata else r
            while i != -1 and i < k:
                inext = anc[i]
                anc[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
            if ata:
                prev[r] = k
    return parent


def _upper_symmetric(a: CscMatrix) -> tuple[np.ndarray, np.ndarray]:
    rows = a.row_idx
    cols = a.col_indices()
    off = rows != cols
    lo = np.minimum(rows[off], cols[off])
    hi = np.maximum(rows[off], cols[off])
    key = np.unique(hi * a.ncols + lo)
    c, r = np.divmod(key, a.ncols)
    cp = np.zeros(a.ncols + 1, np.int64)
    np.cumsum(np.bincount(c, minlength=a.ncols), out=cp[1:])
    return cp, r.astype(np.int64)


def etree_build(a: CscMatrix, mode: str = "pattern-symmetric") -> EliminationTree:
    """Elimination tree of ``A + A^T`` or of ``A A^T`` (``mode="col-AAT"``)."""
    if a.nrows != a.ncols:
        raise InputError(f"elimination tree needs a square matrix, got {a.shape}")
    n = a.ncols
    if mode == "pattern-symmetric":
        cp, ri = _upper_symmetric(a)
        return EliminationTree(_liu(n, 1, cp, ri, False))
    if mode == "col-AAT":
        t = a.transpose()
        return EliminationTree(_liu(n, t.nrows, t.col_ptr, t.row_idx, True))
    raise InputError(f"unknown elimination tree mode '{mode}'")


# -------------------------------------------------------- row range bounds

@dataclass(eq=False)
class RowRangeBound:
    """Per column ``[lo, hi]`` row interval; ``lo = -1`` marks an empty column."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def empty(cls, ncols: int) -> "RowRangeBound":
        return cls(np.full(ncols, -1, np.int64), np.full(ncols, -1, np.int64))

    @property
    def ncols(self) -> int:
        return int(self.lo.size)

    def is_empty(self, c: int) -> bool:
        return self.lo[c] < 0

    def encloses(self, c: int, rows) -> bool:
        rows = np.asarray(rows)
        if rows.size == 0:
            return True
        if self.lo[c] < 0:
            return False
        return bool(rows.min() >= self.lo[c] and rows.max() <= self.hi[c])


# ------------------------------------------------------------ coarse level

@dataclass(eq=False)
class CoarsePlan:
    perm_mwcm: Permutation
    perm_btf: Permutation
    block_offsets: np.ndarray
    block_kind: np.ndarray
    threshold: int

    @property
    def nblocks(self) -> int:
        return int(self.block_offsets.size - 1)

    @property
    def block_sizes(self) -> np.ndarray:
        return np.diff(self.block_offsets)

    @property
    def kinds(self) -> list[str]:
        return [KIND_NAMES[int(k)] for k in self.block_kind]

    @property
    def btf_rows(self) -> int:
        return int(self.block_sizes[self.block_kind == FINE_BTF].sum())

    @property
    def btf_pct(self) -> float:
        n = int(self.block_offsets[-1])
        return 100.0 * self.btf_rows / n if n else 0.0


def coarse_decompose(a: CscMatrix, nd_threshold: int, use_btf: bool = True) -> CoarsePlan:
    """Matching plus block triangular form, blocks classified by size."""
    if a.nrows != a.ncols:
        raise InputError(f"matrix must be square, got {a.shape}")
    n = a.ncols
    if not use_btf:
        ident = Permutation.identity(n)
        return CoarsePlan(ident, ident, np.array([0, n], np.int64),
                          np.array([FINE_ND], np.int8), int(nd_threshold))
    pm = mwcm(a)
    a1 = permute(a, pm, Permutation.identity(n))
    pc, offsets = btf_scc(a1)
    kinds = np.where(np.diff(offsets) > nd_threshold, FINE_ND, FINE_BTF).astype(np.int8)
    return CoarsePlan(pm, pc, offsets, kinds, int(nd_threshold))


# ---------------------------------------------------------------- FineBTF

def lpt_partition(weights, p: int) -> list[np.ndarray]:
    """Longest-processing-time assignment of items to ``p`` groups.

    Heaviest item first (lowest index on ties) into the currently lightest
    group (lowest group index on ties).  Items inside a group are sorted.
    """
    if p < 1:
        raise InputError("number of groups must be at least 1")
    w = np.asarray(weights, np.float64)
    order = np.lexsort((np.arange(w.size), -w))
    heap = [(0.0, g) for g in range(p)]
    groups: list[list[int]] = [[] for _ in range(p)]
    for i in order.tolist():
        load, g = heapq.heappop(heap)
        groups[g].append(i)
        heapq.heappush(heap, (load + w[i], g))
    return [np.array(sorted(g), np.int64) for g in groups]


@dataclass(eq=False)
class FineBtfSymbolic:
    """Per-block AMD orderings, exact counts and the worker partition."""

    block_offsets: np.ndarray
    amd: list[Permutation]
    lcount: np.ndarray
    ucount: np.ndarray
    flops: np.ndarray
    nnz_lu: np.ndarray
    groups: list[np.ndarray]

    @property
    def weights(self) -> np.ndarray:
        return self.flops + self.nnz_lu


def _pattern_counts(cp: np.ndarray, ri: np.ndarray, n: int):
    """Counts from a no-pivot symbolic factorization of a block-diagonal pattern."""
    Lp, Li, Up, Ui = symbolic_panel(cp, ri, 0, n, n)
    lcount = np.diff(Lp)
    ucount = np.diff(Up)
    ucols = np.repeat(np.arange(n), ucount)
    offd = Ui != ucols
    urow = np.bincount(Ui[offd], minlength=n)
    return lcount, ucount, lcount * urow


def fine_btf_symbolic(blocks: list[CscMatrix], p: int) -> FineBtfSymbolic:
    """AMD, exact counts and flop estimate per block, then an LPT partition."""
    for b in blocks:
        if b.nrows != b.ncols:
            raise InputError("diagonal blocks must be square")
    sizes = np.array([b.ncols for b in blocks], np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    n = int(offsets[-1])
    if blocks:
        r = np.concatenate([b.row_idx + offsets[k] for k, b in enumerate(blocks)])
        c = np.concatenate([b.col_indices() + offsets[k] for k, b in enumerate(blocks)])
    else:
        r = c = np.zeros(0, np.int64)
    cp = np.zeros(n + 1, np.int64)
    np.cumsum(np.bincount(c, minlength=n), out=cp[1:])
    return _btf_core(CscMatrix(n, n, cp, r, np.ones(r.size)), offsets, p)


def _btf_core(whole: CscMatrix, offsets: np.ndarray, p: int) -> FineBtfSymbolic:
    """Shared work on a block-diagonal pattern delimited by ``offsets``."""
    n = whole.ncols
    nb = offsets.size - 1
    amd_all = amd_diagonal_blocks(whole, offsets)
    d = permute(whole, amd_all, amd_all)
    lcount, ucount, fl = _pattern_counts(d.col_ptr, d.row_idx, n)
    cum_fl = np.concatenate([[0], np.cumsum(fl)])
    cum_nz = np.concatenate([[0], np.cumsum(lcount + ucount)])
    flops = (cum_fl[offsets[1:]] - cum_fl[offsets[:-1]]).astype(np.int64)
    nnz_lu = (cum_nz[offsets[1:]] - cum_nz[offsets[:-1]]).astype(np.int64)
    amd = [Permutation.from_forward(amd_all.forward[offsets[k]:offsets[k + 1]] - offsets[k])
           for k in range(nb)]
    groups = lpt_partition(flops + nnz_lu, p)
    return FineBtfSymbolic(offsets, amd, lcount, ucount, flops, nnz_lu, groups)


# ------------------------------------------------------------ FineND level

@njit(cache=True, nogil=True)
def _hull(lest_lo, lest_hi, base, ulo, uhi):
    """Row hull of ``L(:, t)`` over ``t`` in each column's ``[ulo, uhi]``."""
    nc = ulo.size
    out_lo = np.full(nc, -1, np.int64)
    out_hi = np.full(nc, -1, np.int64)
    for c in range(nc):
        if ulo[c] < 0:
            continue
        mn = -1
        mx = -1
        for t in range(ulo[c] - base, uhi[c] - base + 1):
            if lest_lo[t] >= 0:
                if mn < 0 or lest_lo[t] < mn:
                    mn = lest_lo[t]
                if lest_hi[t] > mx:
                    mx = lest_hi[t]
        out_lo[c] = mn
        out_hi[c] = mx
    return out_lo, out_hi


@njit(cache=True, nogil=True)
def _walk_columns(bcp, bri, c0, c1, lo, hi, ivl_lo, ivl_hi, parent):
    """Union of elimination-tree paths from each column's rows in ``[lo, hi)``.

    Rows come from ``B[:, c0:c1]`` and from the inclusive intervals.
    Returns ``(count, min_row, max_row)`` per column (global rows).
    """
    nc = c1 - c0
    cnt = np.zeros(nc, np.int64)
    umin = np.full(nc, -1, np.int64)
    umax = np.full(nc, -1, np.int64)
    mark = np.full(max(hi - lo, 1), -1, np.int64)
    starts = np.empty(0, np.int64)
    for c in range(nc):
        j = c0 + c
        for src in range(2):
            if src == 0:
                nst = bcp[j + 1] - bcp[j]
            else:
                nst = 0
                for t in range(ivl_lo.shape[0]):
                    if ivl_lo[t, c] >= 0:
                        a = max(ivl_lo[t, c], lo)
                        b = min(ivl_hi[t, c], hi - 1)
                        if b >= a:
                            nst += b - a + 1
            if starts.size < nst:
                starts = np.empty(nst, np.int64)
            q = 0
            if src == 0:
                for p in range(bcp[j], bcp[j + 1]):
                    starts[q] = bri[p]
                    q += 1
            else:
                for t in range(ivl_lo.shape[0]):
                    if ivl_lo[t, c] >= 0:
                        a = max(ivl_lo[t, c], lo)
                        b = min(ivl_hi[t, c], hi - 1)
                        for r in range(a, b + 1):
                            starts[q] = r
                            q += 1
            for s in range(q):
                r = starts[s]
                if r < lo or r >= hi:
                    continue
                i = r - lo
                while i >= 0 and mark[i] != c:
                    mark[i] = c
                    cnt[c] += 1
                    g = i + lo
                    if umin[c] < 0 or g < umin[c]:
                        umin[c] = g
                    if g > umax[c]:
                        umax[c] = g
                    i = parent[i]
    return cnt, umin, umax


@njit(cache=True, nogil=True)
def _panel_pattern(bcp, bri, c0, c1, r0, m, ivl_lo, ivl_hi):
    """Rows ``>= r0`` of ``B[:, c0:c1]`` merged with interval rows, sorted."""
    nc = c1 - c0
    mark = np.full(m, -1, np.int64)
    cp = np.zeros(nc + 1, np.int64)
    cap = 16
    for c in range(nc):
        cap += bcp[c0 + c + 1] - bcp[c0 + c]
    ri = np.empty(cap, np.int64)
    nz = 0
    for c in range(nc):
        start = nz
        j = c0 + c
        need = bcp[j + 1] - bcp[j]
        for t in range(ivl_lo.shape[0]):
            if ivl_lo[t, c] >= 0:
                need += ivl_hi[t, c] - max(ivl_lo[t, c], r0) + 1
        if nz + need > ri.size:
            grown = np.empty(max(2 * ri.size, nz + need), np.int64)
            grown[:nz] = ri[:nz]
            ri = grown
        for p in range(bcp[j], bcp[j + 1]):
            r = bri[p]
            if r >= r0 and mark[r] != c:
                mark[r] = c
                ri[nz] = r
                nz += 1
        for t in range(ivl_lo.shape[0]):
            if ivl_lo[t, c] >= 0:
                for r in range(max(ivl_lo[t, c], r0), ivl_hi[t, c] + 1):
                    if mark[r] != c:
                        mark[r] = c
                        ri[nz] = r
                        nz += 1
        seg = np.sort(ri[start:nz])
        ri[start:nz] = seg
        cp[c + 1] = nz
    return cp, ri[:nz]


@njit(cache=True, nogil=True)
def _split_by_node(cp, ri, node_of_row, nnodes):
    """Per (row node, column) counts and row min/max of a column pattern."""
    nc = cp.size - 1
    cnt = np.zeros((nnodes, nc), np.int64)
    mn = np.full((nnodes, nc), -1, np.int64)
    mx = np.full((nnodes, nc), -1, np.int64)
    for c in range(nc):
        for p in range(cp[c], cp[c + 1]):
            r = ri[p]
            k = node_of_row[r]
            cnt[k, c] += 1
            if mn[k, c] < 0 or r < mn[k, c]:
                mn[k, c] = r
            if r > mx[k, c]:
                mx[k, c] = r
    return cnt, mn, mx


def _local_square(cp: np.ndarray, ri: np.ndarray, lo: int, hi: int) -> CscMatrix:
    """Rows ``[lo, hi)`` of a panel pattern as a local square matrix."""
    keep = (ri >= lo) & (ri < hi)
    cols = np.repeat(np.arange(cp.size - 1), np.diff(cp))[keep]
    m = hi - lo
    out_cp = np.zeros(m + 1, np.int64)
    np.cumsum(np.bincount(cols, minlength=m), out=out_cp[1:])
    return CscMatrix(m, m, out_cp, ri[keep] - lo, np.ones(int(keep.sum())))


def nd_upper_symbolic(a_ki: CscMatrix, etree_i: EliminationTree,
                      intervals: Iterable[RowRangeBound] = ()) -> tuple[np.ndarray, RowRangeBound]:
    """Counts and row bounds of an upper block ``U_ik`` by elimination-tree walks.

    ``a_ki`` holds the coupling rows (local to node ``i``) for each column;
    optional ``intervals`` add dense row ranges (local) per column.
    """
    m = etree_i.n
    if a_ki.nrows != m:
        raise InputError("block rows do not match the elimination tree")
    ivs = list(intervals)
    nc = a_ki.ncols
    ivl_lo = np.array([iv.lo for iv in ivs], np.int64).reshape(len(ivs), nc)
    ivl_hi = np.array([iv.hi for iv in ivs], np.int64).reshape(len(ivs), nc)
    cnt, lo, hi = _walk_columns(a_ki.col_ptr, a_ki.row_idx, 0, nc, 0, m,
                                ivl_lo, ivl_hi, etree_i.parent)
    return cnt, RowRangeBound(lo, hi)


@dataclass(eq=False)
class NdSymbolic:
    """Estimates for every 2D block of one dissected block.

    ``lcount[(R, K)]`` holds per-column counts of ``L_RK`` (strictly lower
    part when ``R == K``); ``ucount[(l, J)]`` those of ``U_lJ`` (with the
    diagonal when ``l == J``).  Rows in ``lest``/``uest`` are block
    coordinates.
    """

    tree: NdTree
    lcount: dict = field(default_factory=dict)
    ucount: dict = field(default_factory=dict)
    lest: dict = field(default_factory=dict)
    uest: dict = field(default_factory=dict)
    etrees: dict = field(default_factory=dict)
    done: set = field(default_factory=set)

    def l_alloc(self, k: int) -> int:
        return sum(int(v.sum()) for (r, c), v in self.lcount.items() if c == k)

    def u_alloc(self, k: int) -> int:
        return int(self.ucount[(k, k)].sum()) if (k, k) in self.ucount else 0


class _NdState:
    """Working state for the symbolic pass over one dissected block."""

    def __init__(self, b: CscMatrix, tree: NdTree):
        self.b = b
        self.tree = tree
        self.m = b.ncols
        self.res = NdSymbolic(tree)
        self.node_of_row = tree.node_of(np.arange(self.m)).astype(np.int64)

    def nonempty(self, k: int) -> bool:
        return self.tree.nodes[k].size > 0

    def factor_panel(self, k: int, icp: np.ndarray, iri: np.ndarray) -> None:
        nd = self.tree.nodes[k]
        res = self.res
        Lp, Li, Up, Ui = symbolic_panel(icp, iri, nd.lo, nd.hi, self.m)
        nnodes = len(self.tree.nodes)
        cnt, mn, mx = _split_by_node(Lp, Li, self.node_of_row, nnodes)
        for r in [k] + self.tree.ancestors(k):
            res.lcount[(r, k)] = cnt[r].copy()
            res.lest[(r, k)] = RowRangeBound(mn[r].copy(), mx[r].copy())
        res.ucount[(k, k)] = np.diff(Up)
        res.etrees[k] = etree_build(_local_square(icp, iri, nd.lo, nd.hi))
        res.done.add(k)

    def leaf(self, k: int) -> None:
        nd = self.tree.nodes[k]
        b = self.b
        lo, hi = b.col_ptr[nd.lo], b.col_ptr[nd.hi]
        icp = b.col_ptr[nd.lo:nd.hi + 1] - lo
        self.factor_panel(k, icp, b.row_idx[lo:hi])

    def upper(self, l: int, k: int) -> None:
        """``U_lk`` estimate for a descendant ``l`` of separator ``k``."""
        tree, res = self.tree, self.res
        ndl, ndk = tree.nodes[l], tree.nodes[k]
        nc = ndk.size
        ivl = [_hull(res.lest[(l, s)].lo, res.lest[(l, s)].hi, tree.nodes[s].lo,
                     res.uest[(s, k)].lo, res.uest[(s, k)].hi)
               for s in tree.descendants(l) if self.nonempty(s)]
        ivl_lo = np.array([v[0] for v in ivl], np.int64).reshape(len(ivl), nc)
        ivl_hi = np.array([v[1] for v in ivl], np.int64).reshape(len(ivl), nc)
        cnt, umin, umax = _walk_columns(self.b.col_ptr, self.b.row_idx, ndk.lo, ndk.hi,
                                        ndl.lo, ndl.hi, ivl_lo, ivl_hi,
                                        res.etrees[l].parent)
        res.ucount[(l, k)] = cnt
        res.uest[(l, k)] = RowRangeBound(umin, umax)

    def separator(self, k: int) -> None:
        tree, res = self.tree, self.res
        ndk = tree.nodes[k]
        nc = ndk.size
        desc = [l for l in tree.descendants(k) if self.nonempty(l)]
        for l in tree.descendants(k):
            if not self.nonempty(l):
                res.ucount[(l, k)] = np.zeros(nc, np.int64)
                res.uest[(l, k)] = RowRangeBound.empty(nc)
        for l in desc:
            self.upper(l, k)
        ivl = []
        for l in desc:
            for r in [k] + tree.ancestors(k):
                le = res.lest[(r, l)]
                ivl.append(_hull(le.lo, le.hi, tree.nodes[l].lo,
                                 res.uest[(l, k)].lo, res.uest[(l, k)].hi))
        ivl_lo = np.array([v[0] for v in ivl], np.int64).reshape(len(ivl), nc)
        ivl_hi = np.array([v[1] for v in ivl], np.int64).reshape(len(ivl), nc)
        icp, iri = _panel_pattern(self.b.col_ptr, self.b.row_idx, ndk.lo, ndk.hi,
                                  ndk.lo, self.m, ivl_lo, ivl_hi)
        self.factor_panel(k, icp, iri)

    def empty_node(self, k: int) -> None:
        res = self.res
        for r in [k] + self.tree.ancestors(k):
            res.lcount[(r, k)] = np.zeros(0, np.int64)
            res.lest[(r, k)] = RowRangeBound.empty(0)
        res.ucount[(k, k)] = np.zeros(0, np.int64)
        for l in self.tree.descendants(k):
            res.ucount[(l, k)] = np.zeros(0, np.int64)
            res.uest[(l, k)] = RowRangeBound.empty(0)
        res.etrees[k] = EliminationTree(np.zeros(0, np.int64))
        res.done.add(k)

    def run_node(self, k: int) -> None:
        nd = self.tree.nodes[k]
        if nd.size == 0:
            self.empty_node(k)
        elif nd.is_leaf:
            self.leaf(k)
        else:
            self.separator(k)


def nd_leaf_symbolic(b: CscMatrix, tree: NdTree, leaf: int) -> NdSymbolic:
    """Exact counts of ``LU_ii`` and every ``L_ki`` of one leaf, with ``lest`` and the etree."""
    if not tree.nodes[leaf].is_leaf:
        raise InputError(f"node {leaf} is not a leaf")
    st = _NdState(b, tree)
    st.run_node(leaf)
    return st.res


def nd_separator_symbolic(state: _NdState, treelevel: int) -> None:
    """Process every separator at ``treelevel`` (leaves sit at level -1)."""
    for nd in state.tree.nodes:
        if nd.height - 1 == treelevel and not nd.is_leaf:
            for l in state.tree.descendants(nd.index):
                if l not in state.res.done:
                    raise InputError(f"node {l} must be processed before level {treelevel}")
            state.run_node(nd.index)


def nd_symbolic(b: CscMatrix, tree: NdTree) -> NdSymbolic:
    """Leaves first, then separators level by level."""
    st = _NdState(b, tree)
    for k in tree.leaves:
        st.run_node(k)
    for level in range(tree.depth):
        nd_separator_symbolic(st, level)
    return st.res


# ------------------------------------------------------------- the plan

@dataclass(eq=False)
class OrderingBundle:
    """All permutations of the pipeline, plus their composition.

    ``row_perm``/``col_perm`` move the input into pre-pivot coordinates;
    the runtime pivot order is kept by the numeric factor.
    """

    perm_mwcm: Permutation
    perm_btf: Permutation
    perm_amd: Permutation
    perm_match_nd: Permutation
    perm_nd: Permutation
    row_perm: Permutation
    col_perm: Permutation


@dataclass(eq=False)
class BtfGroup:
    """Block-diagonal matrix of the FineBTF blocks handled by one worker."""

    blocks: np.ndarray
    gcols: np.ndarray
    col_ptr: np.ndarray
    row_idx: np.ndarray
    src: np.ndarray
    blk: np.ndarray
    l_cap: int
    u_cap: int


@dataclass(eq=False)
class NdBlockPlan:
    """Everything needed to factor one dissected diagonal block."""

    block: int
    offset: int
    size: int
    tree: NdTree
    col_ptr: np.ndarray
    row_idx: np.ndarray
    src: np.ndarray
    sym: NdSymbolic
    window: int
    windows: dict
    dep_tree: DependencyTree
    tasks: list[Task]
    l_cap: dict
    u_cap: dict
    task_u_cap: dict
    contrib_cap: dict


@dataclass(eq=False)
class SymbolicPlan:
    n: int
    col_ptr: np.ndarray
    row_idx: np.ndarray
    coarse: CoarsePlan
    orderings: OrderingBundle
    btf: FineBtfSymbolic
    btf_block_ids: np.ndarray
    groups: list[BtfGroup]
    nd: list[NdBlockPlan]
    coupling_ptr: np.ndarray
    coupling_idx: np.ndarray
    coupling_src: np.ndarray
    threads: int
    nleaves: int
    window: int

    @property
    def nnz(self) -> int:
        return int(self.row_idx.size)

    @property
    def block_offsets(self) -> np.ndarray:
        return self.coarse.block_offsets

    @property
    def btf_blocks(self) -> int:
        return self.coarse.nblocks

    @property
    def btf_pct(self) -> float:
        return self.coarse.btf_pct

    @property
    def row_perm(self) -> Permutation:
        return self.orderings.row_perm

    @property
    def col_perm(self) -> Permutation:
        return self.orderings.col_perm

    def check_pattern(self, a: CscMatrix) -> None:
        """Raise :class:`PatternMismatchError` unless ``a`` has the analyzed pattern."""
        if a.shape != (self.n, self.n):
            raise PatternMismatchError(f"shape {a.shape} differs from analyzed ({self.n}, {self.n})")
        if not np.array_equal(a.col_ptr, self.col_ptr):
            bad = int(np.nonzero(a.col_ptr != self.col_ptr)[0][0]) if a.col_ptr.size == self.col_ptr.size else 0
            raise PatternMismatchError(f"column pointers differ (first at column {max(bad - 1, 0)})",
                                       max(bad - 1, 0))
        if not np.array_equal(a.row_idx, self.row_idx):
            bad = int(np.nonzero(a.row_idx != self.row_idx)[0][0])
            raise PatternMismatchError(f"row indices differ at entry {bad}", bad)

    def to_bytes(self) -> bytes:
        body = pickle.dumps(self, protocol=pickle.HIGHEST_PROTOCOL)
        return PLAN_MAGIC + PLAN_VERSION.to_bytes(2, "little") + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SymbolicPlan":
        if not blob.startswith(PLAN_MAGIC):
            raise InputError("not a serialized plan")
        version = int.from_bytes(blob[len(PLAN_MAGIC):len(PLAN_MAGIC) + 2], "little")
        if version != PLAN_VERSION:
            raise InputError(f"plan version {version} is not supported")
        plan = pickle.loads(blob[len(PLAN_MAGIC) + 2:])
        if not isinstance(plan, cls):
            raise InputError("serialized object is not a plan")
        return plan


def _pow2_floor(k: int) -> int:
    return 1 << (max(int(k), 1).bit_length() - 1)


def _nd_block(a_pre: CscMatrix, src_pre: np.ndarray, block: int, lo: int, hi: int,
              nleaves: int, window: int) -> tuple[NdBlockPlan, Permutation]:
    sub, smap = submatrix_with_map(a_pre, lo, hi, lo, hi)
    m = hi - lo
    tree_leaves = min(_pow2_floor(nleaves), _pow2_floor(m))
    xadj, adj = symmetric_adjacency(sub)
    order, tree = nd_from_adjacency(xadj, adj, tree_leaves)
    p_nd = Permutation.from_order(order)
    b = permute(sub, p_nd, p_nd)
    # AMD inside each leaf; separators keep their order
    offs = tree.offsets
    leaf_mask = np.zeros(len(tree.nodes), bool)
    leaf_mask[tree.leaves] = True
    d_rows = b.row_idx
    d_cols = b.col_indices()
    nodes_r = tree.node_of(d_rows)
    nodes_c = tree.node_of(d_cols)
    keep = (nodes_r == nodes_c) & leaf_mask[nodes_c]
    cp = np.zeros(m + 1, np.int64)
    np.cumsum(np.bincount(d_cols[keep], minlength=m), out=cp[1:])
    leaf_only = CscMatrix(m, m, cp, d_rows[keep], np.ones(int(keep.sum())))
    p_amd = amd_diagonal_blocks(leaf_only, offs)
    p_loc = p_nd.then(p_amd)
    b, bmap = permute_with_map(sub, p_loc, p_loc)
    sym = nd_symbolic(b, tree)
    windows = default_windows(tree, window)
    tasks = build_schedule(tree, windows)
    dep = build_dependency_tree(tree, tree.nleaves, windows)
    l_cap = {k: int(np.ceil(HEADROOM * sym.l_alloc(k))) + 1 for k in range(len(tree.nodes))}
    u_cap = {k: int(np.ceil(HEADROOM * sym.u_alloc(k))) + 1 for k in range(len(tree.nodes))}
    task_u_cap = {}
    contrib_cap = {}
    for t in tasks:
        if t.kind != "upper":
            continue
        ndk = tree.nodes[t.target]
        c0, c1 = windows[t.target][t.window]
        est = sym.ucount[(t.node, t.target)][c0 - ndk.lo:c1 - ndk.lo].sum()
        task_u_cap[(t.node, t.target, t.window)] = int(np.ceil(HEADROOM * est)) + 1
        anc_rows = sum(tree.nodes[r].size for r in tree.ancestors(t.node))
        contrib_cap[(t.node, t.target, t.window)] = anc_rows * (c1 - c0) + 1
    src = src_pre[smap][bmap]
    return NdBlockPlan(block, lo, m, tree, b.col_ptr, b.row_idx, src, sym, window,
                       windows, dep, tasks, l_cap, u_cap, task_u_cap, contrib_cap), p_loc


def analyze(a: CscMatrix, threads: int = 1, nd_threshold: int | None = None,
            nleaves: int = DEFAULT_LEAVES, use_btf: bool = True,
            window: int = DEFAULT_WINDOW) -> SymbolicPlan:
    """Full symbolic phase: orderings, block structure, estimates and schedule."""
    global _analyze_calls
    _analyze_calls += 1
    if a.nrows != a.ncols:
        raise InputError(f"matrix must be square, got {a.nrows}x{a.ncols}")
    if threads < 1:
        raise InputError("thread count must be at least 1")
    if nleaves < 1 or window < 1:
        raise InputError("leaf count and window width must be positive")
    n = a.ncols
    if nd_threshold is None:
        nd_threshold = default_nd_threshold(threads)
    coarse = coarse_decompose(a, nd_threshold, use_btf)
    pm, pc = coarse.perm_mwcm, coarse.perm_btf
    a1 = permute(a, pm.then(pc), pc)
    offsets = coarse.block_offsets
    kinds = coarse.block_kind
    nb = coarse.nblocks

    # FineBTF blocks: AMD and counts on the block-diagonal part
    btf_ids = np.nonzero(kinds == FINE_BTF)[0]
    fb = _fine_btf_from_global(a1, offsets, btf_ids, threads)

    # symmetric permutation inside blocks
    sym_fwd = np.arange(n, dtype=np.int64)
    for k, b in enumerate(btf_ids):
        lo = offsets[b]
        sym_fwd[lo:offsets[b + 1]] = fb.amd[k].forward + lo
    match_fwd = np.arange(n, dtype=np.int64)
    nd_ids = np.nonzero(kinds == FINE_ND)[0]
    for b in nd_ids:
        lo, hi = offsets[b], offsets[b + 1]
        sub = submatrix_with_map(a1, lo, hi, lo, hi)[0]
        pm2 = mwcm(sub)
        match_fwd[lo:hi] = pm2.forward + lo
    perm_match = Permutation.from_forward(match_fwd)
    a2, src2 = permute_with_map(a, pm.then(pc).then(perm_match), pc)
    nd_plans = []
    nd_fwd = np.arange(n, dtype=np.int64)
    for b in nd_ids:
        lo, hi = int(offsets[b]), int(offsets[b + 1])
        plan_b, p_loc = _nd_block(a2, src2, int(b), lo, hi, nleaves, window)
        nd_fwd[lo:hi] = p_loc.forward + lo
        nd_plans.append(plan_b)
    perm_amd = Permutation.from_forward(sym_fwd)
    perm_nd = Permutation.from_forward(nd_fwd)
    within = perm_amd.then(perm_nd)
    row_perm = pm.then(pc).then(perm_match).then(within)
    col_perm = pc.then(within)
    a_pre, src_pre = permute_with_map(a, row_perm, col_perm)
    for ndp in nd_plans:
        sub, smap = submatrix_with_map(a_pre, ndp.offset, ndp.offset + ndp.size,
                                       ndp.offset, ndp.offset + ndp.size)
        # the block plan was built on the same coordinates
        assert np.array_equal(sub.col_ptr, ndp.col_ptr) and np.array_equal(sub.row_idx, ndp.row_idx)
        ndp.src = src_pre[smap]

    # split A_pre into diagonal-block entries and the coupling
    rows = a_pre.row_idx
    cols = a_pre.col_indices()
    blk_of = np.repeat(np.arange(nb), np.diff(offsets))
    on_diag = blk_of[rows] == blk_of[cols]
    coff = ~on_diag
    cptr = np.zeros(n + 1, np.int64)
    np.cumsum(np.bincount(cols[coff], minlength=n), out=cptr[1:])
    coupling_idx = rows[coff]
    coupling_src = src_pre[np.nonzero(coff)[0]]

    # FineBTF worker groups as block-diagonal local matrices
    groups = []
    group_of_block = np.full(nb, -1, np.int64)
    for g, members in enumerate(fb.groups):
        group_of_block[btf_ids[members]] = g
    diag_idx = np.nonzero(on_diag)[0]
    dcols = cols[diag_idx]
    gsel = group_of_block[blk_of[dcols]]
    for g, members in enumerate(fb.groups):
        bids = btf_ids[members]
        if bids.size == 0:
            continue
        gcols = np.concatenate([np.arange(offsets[b], offsets[b + 1]) for b in bids]).astype(np.int64)
        local = np.full(n, -1, np.int64)
        local[gcols] = np.arange(gcols.size)
        ent = diag_idx[gsel == g]
        lc = local[cols[ent]]
        lr = local[rows[ent]]
        gcp = np.zeros(gcols.size + 1, np.int64)
        np.cumsum(np.bincount(lc, minlength=gcols.size), out=gcp[1:])
        sizes = np.diff(offsets)[bids]
        blk = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        groups.append(BtfGroup(bids, gcols, gcp, lr, src_pre[ent], blk, 0, 0))
    _fill_group_caps(groups, fb, btf_ids, offsets)

    bundle = OrderingBundle(pm, pc, perm_amd, perm_match, perm_nd, row_perm, col_perm)
    return SymbolicPlan(n, a.col_ptr.copy(), a.row_idx.copy(), coarse, bundle, fb, btf_ids,
                        groups, nd_plans, cptr, coupling_idx, coupling_src, int(threads),
                        int(nleaves), int(window))


def _fill_group_caps(groups: list[BtfGroup], fb: FineBtfSymbolic, btf_ids: np.ndarray,
                     offsets: np.ndarray) -> None:
    # fb counts are laid out block after block in btf_ids order
    pos = {int(b): int(fb.block_offsets[k]) for k, b in enumerate(btf_ids)}
    for g in groups:
        lsum = 0
        usum = 0
        for b in g.blocks.tolist():
            s = pos[b]
            size = int(offsets[b + 1] - offsets[b])
            lsum += int(fb.lcount[s:s + size].sum())
            usum += int(fb.ucount[s:s + size].sum())
        g.l_cap = int(np.ceil(HEADROOM * lsum)) + 1
        g.u_cap = int(np.ceil(HEADROOM * usum)) + 1


def _fine_btf_from_global(a1: CscMatrix, offsets: np.ndarray, btf_ids: np.ndarray,
                          p: int) -> FineBtfSymbolic:
    """Same result as :func:`fine_btf_symbolic` without building per-block objects."""
    n = a1.ncols
    sizes = np.diff(offsets)[btf_ids]
    sel = np.zeros(n, bool)
    blk_of = np.repeat(np.arange(offsets.size - 1), np.diff(offsets))
    is_btf_blk = np.zeros(offsets.size - 1, bool)
    is_btf_blk[btf_ids] = True
    rows = a1.row_idx
    cols = a1.col_indices()
    keep = (blk_of[rows] == blk_of[cols]) & is_btf_blk[blk_of[cols]]
    # compact the selected blocks into a contiguous block-diagonal matrix
    newpos = np.full(n, -1, np.int64)
    sel[np.concatenate([np.arange(offsets[b], offsets[b + 1]) for b in btf_ids])
        if btf_ids.size else np.zeros(0, np.int64)] = True
    newpos[sel] = np.arange(int(sel.sum()))
    m = int(sel.sum())
    r = newpos[rows[keep]]
    c = newpos[cols[keep]]
    cp = np.zeros(m + 1, np.int64)
    np.cumsum(np.bincount(c, minlength=m), out=cp[1:])
    whole = CscMatrix(m, m, cp, r, np.ones(r.size))
    loc_off = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    return _btf_core(whole, loc_off, p)
