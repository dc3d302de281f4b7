import threading

import numpy as np
import pytest

from hsplu import analyze, factor, lu_solve, solve
from hsplu.errors import InputError, SingularMatrixError
from hsplu.generators import block_diagonal, grid5, perturb, random_nonsingular, synthetic_suite
from hsplu.solve import (componentwise_backward_error, iterative_refine, residual,
                         solve_with_stats)
from hsplu.sparse import CscMatrix

SUITE = synthetic_suite(seed=0, max_grid=64)


def test_identity():
    a = CscMatrix.identity(6)
    b = np.arange(6.0)
    assert np.array_equal(lu_solve(a, b), b)


def test_diagonal():
    d = np.array([2.0, -4.0, 0.5, 8.0])
    b = np.array([1.0, 2.0, 3.0, 4.0])
    x = lu_solve(CscMatrix.from_dense(np.diag(d)), b)
    assert np.array_equal(x, b / d)


@pytest.mark.parametrize("p", [1, 4])
@pytest.mark.parametrize("name,a", SUITE, ids=[s[0] for s in SUITE])
def test_manufactured_solution(name, a, p):
    plan = analyze(a, threads=p, nd_threshold=100, nleaves=4)
    f = factor(plan, a, threads=p)
    x = solve(f, a.matvec(np.ones(a.ncols)))
    assert np.max(np.abs(x - 1.0)) <= 1e-8


@pytest.mark.parametrize("seed", range(4))
def test_random_unsymmetric_with_pivoting(seed):
    a = random_nonsingular(120, 0.04, seed=seed)
    y = np.random.default_rng(seed).uniform(-1, 1, 120)
    for kw in ({}, {"nd_threshold": 20, "nleaves": 4, "threads": 4}):
        x = lu_solve(a, a.matvec(y), **kw)
        cond = np.linalg.cond(a.to_dense())
        assert np.max(np.abs(x - y)) <= 1e-14 * cond * 100 * np.max(np.abs(y))


def test_touches_each_entry_once():
    a = block_diagonal(10, 3, 30, seed=2)
    plan = analyze(a, threads=2, nd_threshold=25, nleaves=2)
    f = factor(plan, a, threads=2)
    _, st = solve_with_stats(f, np.ones(a.ncols))
    assert st.touched == st.l_nnz + st.u_nnz + st.coupling_nnz
    assert st.coupling_nnz > 0


def test_concurrent_solves_share_factor():
    a = grid5(12, seed=3)
    f = factor(analyze(a, threads=2, nd_threshold=50, nleaves=2), a)
    rng = np.random.default_rng(0)
    rhs = [rng.uniform(-1, 1, a.ncols) for _ in range(6)]
    expect = [solve(f, b) for b in rhs]
    out = [None] * len(rhs)

    def run(i):
        out[i] = solve(f, rhs[i])

    ts = [threading.Thread(target=run, args=(i,)) for i in range(len(rhs))]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert all(np.array_equal(o, e) for o, e in zip(out, expect))


def test_wrong_length_rejected():
    a = grid5(3)
    f = factor(analyze(a), a)
    with pytest.raises(InputError):
        solve(f, np.ones(5))


def test_singular_factor_rejected():
    a = CscMatrix.from_dense(np.array([[1.0, 1.0, 0], [1.0, 1.0, 0], [0, 0, 2.0]]))
    f = factor(analyze(a), a)
    with pytest.raises(SingularMatrixError):
        solve(f, np.ones(3))


def test_residual_definition():
    a = CscMatrix.from_dense(np.array([[2.0, 0], [1.0, 1.0]]))
    x = np.array([1.0, 1.0])
    b = np.array([2.0, 1.0])
    # A x - b = (0, 1); ||A||=2, ||x||=1, ||b||=2
    assert residual(a, x, b) == pytest.approx(0.25)
    assert componentwise_backward_error(a, x, b) == pytest.approx(1.0 / 3.0)


# ----------------------------------------------------------- refinement

def test_refine_exact_factor_converges_immediately():
    a = CscMatrix.from_dense(np.diag([1.0, 2.0, 4.0]))
    f = factor(analyze(a), a)
    res = iterative_refine(f, a, np.array([1.0, 2.0, 4.0]))
    assert res.converged and res.iterations == 0 and not res.diverged


def test_refine_with_perturbed_factor_monotone():
    a = grid5(10, seed=5)
    plan = analyze(a, threads=2, nd_threshold=20, nleaves=2)
    f = factor(plan, perturb(a, 1e-4, seed=6).values, threads=2)
    b = a.matvec(np.ones(a.ncols))
    res = iterative_refine(f, a, b, max_iters=10)
    errs = res.errors
    assert res.iterations >= 1
    kept = errs[:res.iterations + 1] if not res.diverged else errs[:res.iterations]
    assert all(e2 < e1 for e1, e2 in zip(kept, kept[1:]))
    assert errs[-1] <= errs[0] or res.diverged
    assert componentwise_backward_error(a, res.x, b) <= errs[0]


def test_refine_ill_scaled_not_worse():
    rng = np.random.default_rng(7)
    a = random_nonsingular(60, 0.08, seed=7)
    s = 10.0 ** rng.uniform(-6, 6, a.ncols)
    a = a.with_values(a.values * s[a.col_indices()])
    b = rng.uniform(-1, 1, a.ncols)
    f = factor(analyze(a), a)
    res = iterative_refine(f, a, b)
    assert componentwise_backward_error(a, res.x, b) <= res.errors[0]


def test_refine_rejects_negative_iterations():
    a = CscMatrix.identity(2)
    with pytest.raises(InputError):
        iterative_refine(factor(analyze(a), a), a, np.ones(2), max_iters=-1)
