"""Triangular solves through the coarse block structure."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import InputError, SingularMatrixError
from .numeric import NumericFactor
from .sparse import CscMatrix


@njit(cache=True, nogil=True)
def _block_back_substitution(boffs, q, Lp, Li, Lx, Up, Ui, Ux, Cp, Ci, Cx, r):
    """Diagonal blocks last to first; ``r`` (pre-pivot rhs) is updated in place.

    Returns the pre-pivot solution and the number of factor and coupling
    entries touched.
    """
    n = r.size
    x = np.zeros(n)
    y = np.zeros(n)
    ops = 0
    for b in range(boffs.size - 2, -1, -1):
        lo = boffs[b]
        hi = boffs[b + 1]
        for k in range(lo, hi):
            y[k] = r[q[k]]
        for k in range(lo, hi):
            yk = y[k]
            for p in range(Lp[k], Lp[k + 1]):
                y[Li[p]] -= Lx[p] * yk
            ops += Lp[k + 1] - Lp[k]
        for k in range(hi - 1, lo - 1, -1):
            d = Up[k + 1] - 1
            xk = y[k] / Ux[d]
            y[k] = xk
            for p in range(Up[k], d):
                y[Ui[p]] -= Ux[p] * xk
            ops += Up[k + 1] - Up[k]
        for k in range(lo, hi):
            x[k] = y[k]
        for j in range(lo, hi):
            xj = x[j]
            for p in range(Cp[j], Cp[j + 1]):
                r[Ci[p]] -= Cx[p] * xj
            ops += Cp[j + 1] - Cp[j]
    return x, ops


@dataclass
class SolveStats:
    l_nnz: int
    u_nnz: int
    coupling_nnz: int
    touched: int


def _check(f: NumericFactor, b) -> np.ndarray:
    if f.singular:
        raise SingularMatrixError(int(f.block_offsets[f.singular_blocks[0]]),
                                  f"singular diagonal block {f.singular_blocks[0]}")
    b = np.asarray(b, np.float64)
    if b.ndim != 1 or b.size != f.n:
        raise InputError(f"right-hand side must have length {f.n}, got shape {b.shape}")
    return b


def solve_with_stats(f: NumericFactor, b) -> tuple[np.ndarray, SolveStats]:
    b = _check(f, b)
    r = f.row_perm.apply(b)
    L, U, C = f.L, f.U, f.coupling
    xp, ops = _block_back_substitution(f.block_offsets, f.q, L.col_ptr, L.row_idx, L.values,
                                       U.col_ptr, U.row_idx, U.values,
                                       C.col_ptr, C.row_idx, C.values, r)
    return xp[f.col_perm.forward], SolveStats(L.nnz, U.nnz, C.nnz, int(ops))


def solve(f: NumericFactor, b) -> np.ndarray:
    """Solve ``A x = b`` with a finished factor."""
    return solve_with_stats(f, b)[0]


def residual(a: CscMatrix, x, b) -> float:
    """``||A x - b||_inf / (||A||_inf ||x||_inf + ||b||_inf)``."""
    x = np.asarray(x, np.float64)
    b = np.asarray(b, np.float64)
    den = a.norm_inf() * np.abs(x).max(initial=0.0) + np.abs(b).max(initial=0.0)
    num = np.abs(a.matvec(x) - b).max(initial=0.0)
    return float(num / den) if den > 0 else float(num)


def componentwise_backward_error(a: CscMatrix, x, b) -> float:
    """``max_i |r_i| / (|A| |x| + |b|)_i``."""
    x = np.asarray(x, np.float64)
    b = np.asarray(b, np.float64)
    r = np.abs(a.matvec(x) - b)
    absa = CscMatrix(a.nrows, a.ncols, a.col_ptr, a.row_idx, np.abs(a.values))
    den = absa.matvec(np.abs(x)) + np.abs(b)
    ok = den > 0
    if np.any(r[~ok] > 0):
        return float("inf")
    return float((r[ok] / den[ok]).max(initial=0.0))


@dataclass
class RefineResult:
    x: np.ndarray
    iterations: int
    errors: list
    converged: bool
    diverged: bool


def iterative_refine(f: NumericFactor, a: CscMatrix, b, max_iters: int = 5,
                     tol: float = 4 * np.finfo(float).eps) -> RefineResult:
    """Refine ``x <- x + solve(f, b - A x)`` while the componentwise error drops.

    Stops at ``tol`` or when an iterate fails to improve; the best iterate
    is returned and ``diverged`` is set when the last step made things worse.
    """
    if max_iters < 0:
        raise InputError("max_iters must be non-negative")
    b = _check(f, b)
    x = solve(f, b)
    err = componentwise_backward_error(a, x, b)
    errors = [err]
    best, best_err = x, err
    it = 0
    diverged = False
    while it < max_iters and best_err > tol:
        x_new = best + solve(f, b - a.matvec(best))
        e = componentwise_backward_error(a, x_new, b)
        it += 1
        errors.append(e)
        if not e < best_err:
            diverged = e > best_err
            break
        best, best_err = x_new, e
    return RefineResult(best, it, errors, best_err <= tol, diverged)
