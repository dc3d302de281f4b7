import random
import threading
import time

import numpy as np
import pytest

from hsplu import analyze, factor, refactor, solve
from hsplu.errors import InputError, PatternMismatchError, SingularMatrixError
from hsplu.generators import block_diagonal, grid5, perturb, random_nonsingular, synthetic_suite
from hsplu.gp import factor_block_gp
from hsplu.numeric import (AbortFlag, SyncCell, fine_btf_numeric, nd_numeric,
                           reduce_contribution)
from hsplu.solve import residual
from hsplu.sparse import CscMatrix, permute, submatrix_with_map
from oracles import gepp_solve


def sparse_block_diag(blocks):
    n = sum(len(b) for b in blocks)
    d = np.zeros((n, n))
    pos = 0
    for b in blocks:
        m = len(b)
        d[pos:pos + m, pos:pos + m] = b
        pos += m
    return d


def dominant_block(rng, m, density=0.4):
    b = np.where(rng.random((m, m)) < density, rng.uniform(-1, 1, (m, m)), 0.0)
    np.fill_diagonal(b, 0.0)
    # cycle keeps the block strongly connected
    b[np.arange(m), np.roll(np.arange(m), 1)] = rng.uniform(0.5, 1.0, m)
    np.fill_diagonal(b, np.abs(b).sum(axis=0) + 1.0)
    return b


def check_diag_blocks(f, a, tol=1e-10):
    """L U = A_pre[q] on every coarse diagonal block, pivots stay inside blocks."""
    a_pre = permute(a, f.row_perm, f.col_perm)
    amax = np.max(np.abs(a.values))
    for b in range(len(f.block_offsets) - 1):
        lo, hi = f.block_offsets[b], f.block_offsets[b + 1]
        assert np.all((f.q[lo:hi] >= lo) & (f.q[lo:hi] < hi))
        lu = f.block_lu(b)
        blk = submatrix_with_map(a_pre, lo, hi, lo, hi)[0].to_dense()
        prod = (lu.L.to_dense() + np.eye(hi - lo)) @ lu.U.to_dense()
        assert np.max(np.abs(prod - blk[lu.pivot.inverse]), initial=0.0) <= tol * amax


# ------------------------------------------------------------- sync cells

def test_sync_cell_monotone():
    c = SyncCell()
    c.publish(1)
    c.publish(3)
    assert c.value == 3
    with pytest.raises(RuntimeError):
        c.publish(2)


def test_sync_cell_wait_observes_publish():
    c = SyncCell()
    seen = []

    def consumer():
        seen.append(c.wait_for(2))

    t = threading.Thread(target=consumer)
    t.start()
    c.publish(1)
    time.sleep(0.02)
    assert not seen
    c.publish(2)
    t.join(5)
    assert seen == [True]


def test_sync_cell_abort_wakes_waiters():
    flag = AbortFlag()
    c = SyncCell(flag)
    out = []
    t = threading.Thread(target=lambda: out.append(c.wait_for(5)))
    t.start()
    time.sleep(0.02)
    flag.trigger(RuntimeError("stop"))
    t.join(5)
    assert out == [False] and flag.is_set


# --------------------------------------------------------- reductions

def test_reduce_no_contributions():
    r, v = reduce_contribution(([0, 2], [1.0, 2.0]), [], 3)
    assert r.tolist() == [0, 2] and v.tolist() == [1.0, 2.0]


def test_reduce_single_hand_example():
    l_blk = CscMatrix.from_dense(np.array([[1.0, 0, 2], [0, 0, 0], [3, 1, 0]]))
    r, v = reduce_contribution(([1], [5.0]), [(0, l_blk, ([0, 2], [2.0, 1.0]))], 3)
    # A - L u with u = (2, 0, 1): L u = (2 + 2, 0, 6)
    assert r.tolist() == [0, 1, 2] and v.tolist() == [-4.0, 5.0, -6.0]


def test_reduce_dense_oracle_and_order_independence(rng):
    n = 12
    contribs = []
    ref = np.zeros(n)
    a_rows = np.sort(rng.choice(n, 5, replace=False))
    a_vals = rng.uniform(-1, 1, 5)
    ref[a_rows] = a_vals
    for k in range(6):
        l_dense = np.where(rng.random((n, 8)) < 0.3, rng.uniform(-1, 1, (n, 8)), 0.0)
        idx = np.sort(rng.choice(8, 3, replace=False))
        u = rng.uniform(-1, 1, 3)
        contribs.append((k, CscMatrix.from_dense(l_dense), (idx, u)))
        uu = np.zeros(8)
        uu[idx] = u
        ref -= l_dense @ uu
    r, v = reduce_contribution((a_rows, a_vals), contribs, n)
    dense = np.zeros(n)
    dense[r] = v
    assert np.max(np.abs(dense - ref)) <= 1e-14
    for seed in range(5):
        shuffled = contribs[:]
        random.Random(seed).shuffle(shuffled)
        r2, v2 = reduce_contribution((a_rows, a_vals), shuffled, n)
        assert np.array_equal(r, r2) and np.array_equal(v, v2)


def test_reduce_rejects_row_mismatch():
    with pytest.raises(InputError):
        reduce_contribution(([0], [1.0]), [(0, CscMatrix.identity(2), ([0], [1.0]))], 3)


# ----------------------------------------------------------- FineBTF

def test_btf_unit_blocks_values_in_u():
    a = CscMatrix.from_dense(np.diag([2.0, -3.0, 5.0, 7.0]))
    plan = analyze(a)
    lus = fine_btf_numeric(plan, a)
    assert len(lus) == 4
    vals = sorted(float(lu.U.values[0]) for lu in lus.values())
    assert vals == [-3.0, 2.0, 5.0, 7.0]
    assert all(lu.L.nnz == 0 for lu in lus.values())


def test_btf_identical_blocks_identical_factors(rng):
    blk = dominant_block(rng, 10)
    a = CscMatrix.from_dense(sparse_block_diag([blk, blk]))
    plan = analyze(a, threads=2)
    assert plan.btf_blocks == 2 and len(plan.groups) == 2
    lus = fine_btf_numeric(plan, a, threads=2)
    x, y = lus[0], lus[1]
    assert x.L.identical(y.L) and x.U.identical(y.U) and x.pivot == y.pivot


@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_btf_random_block_diagonal_residual(p, rng):
    blocks = [dominant_block(rng, 10, 0.3) for _ in range(6)]
    d = sparse_block_diag(blocks)
    d[:10, 30:40] = np.where(rng.random((10, 10)) < 0.2, 0.3, 0.0)
    a = CscMatrix.from_dense(d)
    plan = analyze(a, threads=p)
    f = factor(plan, a, threads=p)
    b = rng.uniform(-1, 1, 60)
    x = solve(f, b)
    assert residual(a, x, b) <= 1e-10
    ref = gepp_solve(d, b)
    assert np.max(np.abs(x - ref)) <= 1e-10 * np.max(np.abs(ref))
    check_diag_blocks(f, a)


def test_btf_singular_block_flagged():
    d = sparse_block_diag([np.array([[1.0, 1.0], [1.0, 1.0]]), np.array([[3.0]])])
    a = CscMatrix.from_dense(d)
    plan = analyze(a)
    lus = fine_btf_numeric(plan, a)
    assert sum(v is None for v in lus.values()) == 1
    f = factor(plan, a)
    assert f.singular and len(f.singular_blocks) == 1
    with pytest.raises(SingularMatrixError):
        solve(f, np.ones(3))


# ------------------------------------------------------------ FineND

def test_nd_decoupled_leaves_match_independent_factors(rng):
    b1, b2 = dominant_block(rng, 12, 0.3), dominant_block(rng, 9, 0.3)
    a = CscMatrix.from_dense(sparse_block_diag([b1, b2]))
    plan = analyze(a, threads=2, nleaves=2, use_btf=False)
    ndp = plan.nd[0]
    root = ndp.tree.nodes[ndp.tree.root]
    assert root.size == 0
    lgrid, ugrid, piv = nd_numeric(plan, 0, a, threads=2)
    a_pre = permute(a, plan.row_perm, plan.col_perm)
    for leaf in ndp.tree.leaves:
        nd = ndp.tree.nodes[leaf]
        ref = factor_block_gp(submatrix_with_map(a_pre, nd.lo, nd.hi, nd.lo, nd.hi)[0])
        got_l = lgrid.block(leaf, leaf)
        got_u = ugrid.block(leaf, leaf)
        assert (got_l is None and ref.L.nnz == 0) or got_l.identical(ref.L)
        assert got_u.identical(ref.U)
        assert piv[leaf] == ref.pivot
    assert not any(k[0] == ndp.tree.root or k[1] == ndp.tree.root for k in lgrid.present())


def test_nd_grid64_four_workers_residual(rng):
    a = grid5(8, seed=11)
    plan = analyze(a, threads=4, nd_threshold=10, nleaves=4)
    assert len(plan.nd) == 1 and len(plan.nd[0].tree.leaves) == 4
    f = factor(plan, a, threads=4)
    b = rng.uniform(-1, 1, 64)
    x = solve(f, b)
    assert residual(a, x, b) <= 1e-12
    ref = gepp_solve(a.to_dense(), b)
    assert np.max(np.abs(x - ref)) <= 1e-10 * np.max(np.abs(ref))
    check_diag_blocks(f, a)


def test_nd_pivots_confined_to_nodes():
    a = perturb(random_nonsingular(150, 0.03, seed=4), 0.2, seed=5)
    plan = analyze(a, threads=4, nd_threshold=20, nleaves=4)
    f = factor(plan, a, pivot_tol=1.0, threads=4)
    for ndp in plan.nd:
        for nd in ndp.tree.nodes:
            lo, hi = ndp.offset + nd.lo, ndp.offset + nd.hi
            assert np.all((f.q[lo:hi] >= lo) & (f.q[lo:hi] < hi))
    check_diag_blocks(f, a)


SUITE = synthetic_suite(seed=0, max_grid=64)


@pytest.mark.parametrize("name,a", SUITE, ids=[s[0] for s in SUITE])
def test_factor_bitwise_identical_across_threads(name, a):
    plan = analyze(a, threads=4, nd_threshold=100, nleaves=8)
    ref = factor(plan, a, threads=1)
    for p in (2, 4):
        assert factor(plan, a, threads=p).identical(ref)
    check_diag_blocks(ref, a)


def test_nd_singular_aborts_with_column():
    # 3-vertex path; the separator's Schur complement is exactly zero
    d = np.array([[1.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 1.0]])
    a = CscMatrix.from_dense(d)
    plan = analyze(a, threads=2, nleaves=2, use_btf=False)
    with pytest.raises(SingularMatrixError) as ei:
        factor(plan, a, threads=2)
    assert 0 <= ei.value.column < 3


# ----------------------------------------------------------- refactor

def _plan_and_factor(a, p=2):
    plan = analyze(a, threads=p, nd_threshold=20, nleaves=4)
    return plan, factor(plan, a, threads=p)


def test_refactor_same_values_identical():
    a = block_diagonal(20, 2, 40, seed=1)
    plan, f = _plan_and_factor(a)
    g = refactor(plan, f, a.values.copy())
    assert g.identical(f) and g.checksum() == f.checksum()


def test_refactor_scaled_values():
    a = grid5(10, seed=2)
    plan, f = _plan_and_factor(a)
    g = refactor(plan, f, 2.0 * a.values)
    assert g.L.identical(f.L)
    assert np.array_equal(g.U.values, 2.0 * f.U.values)
    assert np.array_equal(g.q, f.q)


def test_refactor_pattern_mismatch_rejected():
    a = grid5(6)
    plan, f = _plan_and_factor(a)
    with pytest.raises(PatternMismatchError):
        refactor(plan, f, a.values[:-1])
    d = a.to_dense()
    d[0, -1] = 1.0
    with pytest.raises(PatternMismatchError):
        refactor(plan, f, CscMatrix.from_dense(d))


def test_refactor_sequence_residuals():
    base = grid5(10, seed=3)
    plan, f = _plan_and_factor(base)
    rng = np.random.default_rng(0)
    worst = 0.0
    for k in range(100):
        a = perturb(base, 0.3, seed=k)
        f = refactor(plan, f, a.values)
        b = rng.uniform(-1, 1, a.ncols)
        worst = max(worst, residual(a, solve(f, b), b))
    assert worst <= 1e-10


def test_factor_rejects_bad_tolerance():
    a = grid5(3)
    plan = analyze(a)
    with pytest.raises(InputError):
        factor(plan, a, pivot_tol=2.0)
    with pytest.raises(InputError):
        factor(plan, a, threads=0)


def test_no_reallocations_on_dominant_suite():
    for _, a in SUITE:
        plan = analyze(a, threads=4, nd_threshold=100, nleaves=4)
        assert factor(plan, a, threads=4).reallocs == 0
