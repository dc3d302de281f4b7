"""Numeric factorization over the symbolic plan.

FineBTF blocks are factored group by group (one group per worker, each
group a block-diagonal matrix handed to a single panel call).  Dissected
blocks run the task list of the plan: every worker walks its queue in
key order and waits on per-block counters published by the producing
workers.  All pieces are finally assembled into global ``L`` and ``U``
in pre-pivot coordinates.
"""

from __future__ import annotations

import hashlib
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, PatternMismatchError, SingularMatrixError
from .gp import LuBlock, block_spmv_pattern, gp_panel, lower_solve_panel, reduce_window
from .schedule import Task, worker_queues
from .sparse import BlockedMatrix, CscMatrix, Permutation, extract_blocks, submatrix_with_map
from .symbolic import NdBlockPlan, SymbolicPlan

DEFAULT_PIVOT_TOL = 1e-3


# ------------------------------------------------------------ sync cells

class AbortFlag:
    """Shared stop signal that wakes every waiting cell."""

    def __init__(self):
        self._lock = threading.Lock()
        self.cells: list["SyncCell"] = []
        self.error: BaseException | None = None

    @property
    def is_set(self) -> bool:
        return self.error is not None

    def trigger(self, err: BaseException) -> None:
        with self._lock:
            if self.error is None:
                self.error = err
        for cell in self.cells:
            with cell._cond:
                cell._cond.notify_all()


class SyncCell:
    """Monotone readiness counter for one 2D block (finished column windows)."""

    def __init__(self, abort: AbortFlag | None = None):
        self._cond = threading.Condition()
        self._value = 0
        self._abort = abort
        if abort is not None:
            abort.cells.append(self)

    @property
    def value(self) -> int:
        with self._cond:
            return self._value

    def publish(self, value: int) -> None:
        with self._cond:
            if value < self._value:
                raise RuntimeError(f"counter may not decrease ({self._value} -> {value})")
            self._value = value
            self._cond.notify_all()

    def wait_for(self, value: int) -> bool:
        """Block until the counter reaches ``value``; False if aborted first."""
        with self._cond:
            while self._value < value:
                if self._abort is not None and self._abort.is_set:
                    return False
                self._cond.wait()
            return True


# ------------------------------------------------------- the factor object

@dataclass(eq=False)
class NumericFactor:
    """Global ``L`` (unit diagonal implicit) and ``U`` in pivot-step coordinates.

    Column ``k`` of both factors is column ``k`` of the pre-pivot matrix
    ``A_pre = A[row_perm, col_perm]``; ``q[k]`` is the pre-pivot row that
    was pivoted at step ``k``.  Coupling entries above the coarse diagonal
    blocks are kept in ``coupling`` (pre-pivot coordinates).
    """

    n: int
    L: CscMatrix
    U: CscMatrix
    q: np.ndarray
    coupling: CscMatrix
    block_offsets: np.ndarray
    block_kind: np.ndarray
    row_perm: Permutation
    col_perm: Permutation
    singular_blocks: list = field(default_factory=list)
    reallocs: int = 0
    ops: int = 0
    threads: int = 1
    plan: SymbolicPlan | None = field(default=None, repr=False)

    @property
    def nnz(self) -> int:
        return self.L.nnz + self.U.nnz

    @property
    def singular(self) -> bool:
        return bool(self.singular_blocks)

    @property
    def pivot(self) -> Permutation:
        """Pre-pivot row to step."""
        return Permutation.from_order(self.q)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.L.col_ptr, self.L.row_idx, self.L.values,
                    self.U.col_ptr, self.U.row_idx, self.U.values, self.q):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def identical(self, other: "NumericFactor") -> bool:
        return (self.L.identical(other.L) and self.U.identical(other.U)
                and np.array_equal(self.q, other.q))

    def block_lu(self, b: int) -> LuBlock:
        """``L U = P A_pre[blk, blk]`` for one coarse diagonal block."""
        lo, hi = int(self.block_offsets[b]), int(self.block_offsets[b + 1])
        L = submatrix_with_map(self.L, lo, hi, lo, hi)[0]
        U = submatrix_with_map(self.U, lo, hi, lo, hi)[0]
        fwd = np.empty(hi - lo, np.int64)
        fwd[self.q[lo:hi] - lo] = np.arange(hi - lo)
        return LuBlock(L, U, Permutation.from_forward(fwd))

    def nd_grid(self, i: int) -> tuple[BlockedMatrix, BlockedMatrix, list[Permutation]]:
        """2D ``L``/``U`` blocks of the ``i``-th dissected block and per-node pivots."""
        ndp = self.plan.nd[i]
        lo, hi = ndp.offset, ndp.offset + ndp.size
        offs = ndp.tree.offsets
        L = submatrix_with_map(self.L, lo, hi, lo, hi)[0]
        U = submatrix_with_map(self.U, lo, hi, lo, hi)[0]
        piv = []
        for nd in ndp.tree.nodes:
            a, b = lo + nd.lo, lo + nd.hi
            fwd = np.empty(nd.size, np.int64)
            fwd[self.q[a:b] - a] = np.arange(nd.size)
            piv.append(Permutation.from_forward(fwd))
        return extract_blocks(L, offs, offs), extract_blocks(U, offs, offs), piv

    def nd_counts(self, i: int) -> tuple[dict, dict]:
        """Per-column counts of every 2D ``L``/``U`` block of a dissected block."""
        ndp = self.plan.nd[i]
        tree = ndp.tree
        lgrid, ugrid, _ = self.nd_grid(i)
        lc, uc = {}, {}
        for nd in tree.nodes:
            k = nd.index
            for r in [k] + tree.ancestors(k):
                blk = lgrid.block(r, k)
                lc[(r, k)] = np.diff(blk.col_ptr) if blk is not None else np.zeros(nd.size, np.int64)
            for l in list(tree.descendants(k)) + [k]:
                blk = ugrid.block(l, k)
                uc[(l, k)] = np.diff(blk.col_ptr) if blk is not None else np.zeros(nd.size, np.int64)
        return lc, uc


# --------------------------------------------------------------- helpers

def reduce_contribution(a_col, contribs, nrows: int) -> tuple[np.ndarray, np.ndarray]:
    """``a_col - sum(L_block @ u_col)`` with contributions taken in ascending block index.

    ``a_col`` is ``(rows, values)``; ``contribs`` holds
    ``(block_index, L_block, (u_rows, u_values))`` in any arrival order.
    """
    rows, vals = (np.asarray(a_col[0], np.int64), np.asarray(a_col[1], np.float64))
    acc = np.zeros(nrows)
    present = np.zeros(nrows, bool)
    acc[rows] = vals
    present[rows] = True
    for _, lblk, ucol in sorted(contribs, key=lambda t: t[0]):
        if lblk.nrows != nrows:
            raise InputError("contribution rows do not match the target column")
        r, v = block_spmv_pattern(lblk, ucol)
        for i, x in zip(r.tolist(), v.tolist()):
            acc[i] -= x
        present[r] = True
    out = np.nonzero(present)[0]
    return out, acc[out]


def _threads(plan: SymbolicPlan, threads: int | None) -> int:
    p = int(plan.threads if threads is None else threads)
    if p < 1:
        raise InputError("thread count must be at least 1")
    return p


def _values_of(plan: SymbolicPlan, a) -> np.ndarray:
    if isinstance(a, CscMatrix):
        plan.check_pattern(a)
        return a.values
    vals = np.asarray(a, np.float64)
    if vals.ndim != 1 or vals.size != plan.nnz:
        raise PatternMismatchError(f"expected {plan.nnz} values, got {vals.size}")
    return vals


@dataclass
class _Pieces:
    """Coordinate lists of factor entries (global steps and columns)."""

    lc: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    lx: list = field(default_factory=list)
    uc: list = field(default_factory=list)
    ur: list = field(default_factory=list)
    ux: list = field(default_factory=list)
    qs: list = field(default_factory=list)
    qr: list = field(default_factory=list)
    reallocs: int = 0
    ops: int = 0
    singular: list = field(default_factory=list)

    def extend(self, other: "_Pieces") -> None:
        for name in ("lc", "lr", "lx", "uc", "ur", "ux", "qs", "qr", "singular"):
            getattr(self, name).extend(getattr(other, name))
        self.reallocs += other.reallocs
        self.ops += other.ops


def _assemble(n: int, cols: list, rows: list, vals: list) -> CscMatrix:
    if cols:
        c = np.concatenate(cols).astype(np.int64)
        r = np.concatenate(rows).astype(np.int64)
        v = np.concatenate(vals).astype(np.float64)
    else:
        c = r = np.zeros(0, np.int64)
        v = np.zeros(0)
    order = np.lexsort((r, c))
    cp = np.zeros(n + 1, np.int64)
    np.cumsum(np.bincount(c, minlength=n), out=cp[1:])
    return CscMatrix(n, n, cp, r[order], v[order])


# ---------------------------------------------------------------- FineBTF

def _factor_group(plan: SymbolicPlan, g: int, values: np.ndarray, tol: float) -> _Pieces:
    grp = plan.groups[g]
    m = grp.gcols.size
    pinv = np.full(m, -1, np.int64)
    Lp = np.zeros(m + 1, np.int64)
    Up = np.zeros(m + 1, np.int64)
    Li, Lx = np.empty(grp.l_cap, np.int64), np.empty(grp.l_cap)
    Ui, Ux = np.empty(grp.u_cap, np.int64), np.empty(grp.u_cap)
    Li, Lx, Ui, Ux, reallocs, sing, ops = gp_panel(
        grp.col_ptr, grp.row_idx, values[grp.src], 0, m, 0, pinv, Lp, Li, Lx, Up, Ui, Ux,
        tol, grp.blk, False)
    gc = grp.gcols
    out = _Pieces(reallocs=int(reallocs), ops=int(ops))
    cols = np.arange(m)
    out.lc.append(gc[np.repeat(cols, np.diff(Lp))])
    out.lr.append(gc[pinv[Li[:Lp[m]]]])
    out.lx.append(Lx[:Lp[m]].copy())
    out.uc.append(gc[np.repeat(cols, np.diff(Up))])
    out.ur.append(gc[Ui[:Up[m]]])
    out.ux.append(Ux[:Up[m]].copy())
    out.qs.append(gc[pinv])
    out.qr.append(gc)
    if sing.size:
        local_blk = np.searchsorted(grp.blk, sing, side="right") - 1
        out.singular.extend(sorted(set(grp.blocks[local_blk].tolist())))
    return out


def _run_btf(plan: SymbolicPlan, values: np.ndarray, tol: float,
             pool: ThreadPoolExecutor | None) -> _Pieces:
    out = _Pieces()
    ids = range(len(plan.groups))
    if pool is None:
        results = [_factor_group(plan, g, values, tol) for g in ids]
    else:
        results = list(pool.map(lambda g: _factor_group(plan, g, values, tol), ids))
    for r in results:
        out.extend(r)
    return out


def fine_btf_numeric(plan: SymbolicPlan, a, pivot_tol: float = DEFAULT_PIVOT_TOL,
                     threads: int | None = None) -> dict:
    """Factor every FineBTF block; returns ``{coarse block: LuBlock}``.

    Singular blocks are reported with ``None`` instead of raising.
    """
    values = _values_of(plan, a)
    p = _threads(plan, threads)
    with ThreadPoolExecutor(p) as pool:
        pieces = _run_btf(plan, values, pivot_tol, pool if p > 1 else None)
    f = _finish(plan, values, pieces, p)
    return {int(b): (None if int(b) in f.singular_blocks else f.block_lu(int(b)))
            for b in plan.btf_block_ids}


# ---------------------------------------------------------------- FineND

class _NdRun:
    """Executes the task list of one dissected block."""

    def __init__(self, ndp: NdBlockPlan, values: np.ndarray, tol: float, p: int):
        self.ndp = ndp
        self.tree = ndp.tree
        self.m = ndp.size
        self.tol = tol
        self.p = p
        self.bx = values[ndp.src]
        self.pinv = np.full(self.m, -1, np.int64)
        self.panels = {}
        for nd in self.tree.nodes:
            if nd.size:
                lc, uc = ndp.l_cap[nd.index], ndp.u_cap[nd.index]
                self.panels[nd.index] = [np.zeros(nd.size + 1, np.int64),
                                         np.empty(lc, np.int64), np.empty(lc),
                                         np.zeros(nd.size + 1, np.int64),
                                         np.empty(uc, np.int64), np.empty(uc)]
        self.uout = {}
        self.contrib = {}
        self.abort = AbortFlag()
        self.cells = {t.publishes[0]: None for t in ndp.tasks}
        for key in self.cells:
            self.cells[key] = SyncCell(self.abort)
        self.reallocs = [0] * p
        self.ops = [0] * p

    def _contribs(self, keys: list, ncols: int):
        parts = [self.contrib[k] for k in keys]
        kcp = np.empty((len(parts), ncols + 1), np.int64)
        base = 0
        for i, (ccp, ci, _) in enumerate(parts):
            kcp[i] = ccp + base
            base += ci.size
        if parts:
            kri = np.concatenate([p[1] for p in parts])
            kvx = np.concatenate([p[2] for p in parts])
        else:
            kri, kvx = np.zeros(0, np.int64), np.zeros(0)
        return kcp, kri, kvx

    def _panel_factor(self, k: int, icp, iri, ivx, kcol0: int, w: int) -> None:
        nd = self.tree.nodes[k]
        pan = self.panels[k]
        blk = np.array([0, nd.size], np.int64)
        Li, Lx, Ui, Ux, re, sing, ops = gp_panel(
            icp, iri, ivx, nd.lo, nd.hi, kcol0, self.pinv, pan[0], pan[1], pan[2],
            pan[3], pan[4], pan[5], self.tol, blk, True)
        pan[1], pan[2], pan[4], pan[5] = Li, Lx, Ui, Ux
        self.reallocs[w] += int(re)
        self.ops[w] += int(ops)
        if sing.size:
            raise SingularMatrixError(self.ndp.offset + int(sing[0]), "separator" if
                                      not nd.is_leaf else "leaf")

    def run_task(self, t: Task, w: int) -> None:
        ndp, tree = self.ndp, self.tree
        bcp, bri, bx = ndp.col_ptr, ndp.row_idx, self.bx
        if t.kind == "leaf":
            nd = tree.nodes[t.node]
            s, e = bcp[nd.lo], bcp[nd.hi]
            self._panel_factor(t.node, bcp[nd.lo:nd.hi + 1] - s, bri[s:e], bx[s:e], 0, w)
            return
        k = t.target
        c0, c1 = ndp.windows[k][t.window]
        if t.kind == "upper":
            l = t.node
            ndl = tree.nodes[l]
            keys = [(s, k, t.window) for s in tree.descendants(l) if tree.nodes[s].size]
            kcp, kri, kvx = self._contribs(keys, c1 - c0)
            icp, iri, ivx = reduce_window(self.m, bcp, bri, bx, c0, c1, ndl.lo, ndl.hi,
                                          kcp, kri, kvx)
            pan = self.panels[l]
            key = (l, k, t.window)
            ucp, ui, ux, ccp, ci, cx, re = lower_solve_panel(
                icp, iri, ivx, ndl.lo, ndl.hi, self.pinv, pan[0], pan[1], pan[2],
                ndp.task_u_cap[key], ndp.contrib_cap[key])
            self.uout[key] = (ucp, ui, ux)
            self.contrib[key] = (ccp, ci, cx)
            self.reallocs[w] += int(re)
            self.ops[w] += int(ui.size + ci.size)
            return
        ndk = tree.nodes[k]
        keys = [(l, k, t.window) for l in tree.descendants(k) if tree.nodes[l].size]
        kcp, kri, kvx = self._contribs(keys, c1 - c0)
        icp, iri, ivx = reduce_window(self.m, bcp, bri, bx, c0, c1, ndk.lo, self.m,
                                      kcp, kri, kvx)
        self._panel_factor(k, icp, iri, ivx, c0 - ndk.lo, w)

    def worker(self, w: int, queue: list[Task]) -> None:
        for t in queue:
            for cell, need in t.deps:
                if not self.cells[cell].wait_for(need):
                    return
            if self.abort.is_set:
                return
            try:
                self.run_task(t, w)
            except BaseException as err:   # noqa: BLE001 - forwarded to the caller
                self.abort.trigger(err)
                return
            self.cells[t.publishes[0]].publish(t.publishes[1])

    def run(self, pool: ThreadPoolExecutor | None) -> _Pieces:
        queues = worker_queues(self.ndp.tasks, self.p, self.tree.nleaves)
        if pool is None or self.p == 1:
            for w, q in enumerate(queues):
                self.worker(w, q)
        else:
            futures = [pool.submit(self.worker, w, q) for w, q in enumerate(queues)]
            for f in futures:
                f.result()
        if self.abort.error is not None:
            raise self.abort.error
        return self.pieces()

    def pieces(self) -> _Pieces:
        off = self.ndp.offset
        pinv = self.pinv
        out = _Pieces(reallocs=sum(self.reallocs), ops=sum(self.ops))
        for k, pan in self.panels.items():
            nd = self.tree.nodes[k]
            Lp, Li, Lx, Up, Ui, Ux = pan
            cols = off + nd.lo + np.arange(nd.size)
            out.lc.append(np.repeat(cols, np.diff(Lp)))
            out.lr.append(off + pinv[Li[:Lp[-1]]])
            out.lx.append(Lx[:Lp[-1]].copy())
            out.uc.append(np.repeat(cols, np.diff(Up)))
            out.ur.append(off + Ui[:Up[-1]])
            out.ux.append(Ux[:Up[-1]].copy())
        for (l, k, w), (ucp, ui, ux) in sorted(self.uout.items()):
            c0, c1 = self.ndp.windows[k][w]
            out.uc.append(off + np.repeat(np.arange(c0, c1), np.diff(ucp)))
            out.ur.append(off + ui)
            out.ux.append(ux)
        out.qs.append(off + pinv)
        out.qr.append(off + np.arange(self.m))
        return out


def nd_numeric(plan: SymbolicPlan, i: int, a, pivot_tol: float = DEFAULT_PIVOT_TOL,
               threads: int | None = None) -> tuple[BlockedMatrix, BlockedMatrix, list]:
    """Factor the ``i``-th dissected block alone; returns its 2D ``L``/``U`` grids and pivots."""
    values = _values_of(plan, a)
    p = _threads(plan, threads)
    run = _NdRun(plan.nd[i], values, pivot_tol, p)
    with ThreadPoolExecutor(p) as pool:
        pieces = run.run(pool if p > 1 else None)
    return _finish(plan, values, pieces, p).nd_grid(i)


# ------------------------------------------------------------ entry points

def _finish(plan: SymbolicPlan, values: np.ndarray, pieces: _Pieces, p: int) -> NumericFactor:
    n = plan.n
    L = _assemble(n, pieces.lc, pieces.lr, pieces.lx)
    U = _assemble(n, pieces.uc, pieces.ur, pieces.ux)
    q = np.arange(n, dtype=np.int64)
    if pieces.qs:
        q[np.concatenate(pieces.qs)] = np.concatenate(pieces.qr)
    coupling = CscMatrix(n, n, plan.coupling_ptr, plan.coupling_idx, values[plan.coupling_src])
    return NumericFactor(n, L, U, q, coupling, plan.coarse.block_offsets, plan.coarse.block_kind,
                         plan.row_perm, plan.col_perm, sorted(pieces.singular), pieces.reallocs,
                         pieces.ops, p, plan)


def factor(plan: SymbolicPlan, a, pivot_tol: float = DEFAULT_PIVOT_TOL,
           threads: int | None = None) -> NumericFactor:
    """Numeric factorization of ``a`` (a matrix or its value array) under ``plan``.

    Singular FineBTF blocks are flagged on the result; a singular pivot
    inside a dissected block aborts with :class:`SingularMatrixError`.
    """
    if not 0.0 <= pivot_tol <= 1.0:
        raise InputError(f"pivot tolerance must lie in [0, 1], got {pivot_tol}")
    values = _values_of(plan, a)
    p = _threads(plan, threads)
    pool = ThreadPoolExecutor(p) if p > 1 else None
    try:
        pieces = _run_btf(plan, values, pivot_tol, pool)
        for ndp in plan.nd:
            try:
                pieces.extend(_NdRun(ndp, values, pivot_tol, p).run(pool))
            except SingularMatrixError as err:
                col = int(plan.col_perm.inverse[err.column])
                raise SingularMatrixError(col, err.where) from None
    finally:
        if pool is not None:
            pool.shutdown()
    return _finish(plan, values, pieces, p)


def refactor(plan: SymbolicPlan, fac: NumericFactor | None, new_values,
             pivot_tol: float = DEFAULT_PIVOT_TOL, threads: int | None = None) -> NumericFactor:
    """Factor a matrix with the analyzed pattern, reusing every ordering and schedule.

    The pattern (or value count) is checked before any work is done.
    """
    values = _values_of(plan, new_values)
    if threads is None:
        threads = fac.threads if fac is not None else plan.threads
    return factor(plan, values, pivot_tol, threads)

