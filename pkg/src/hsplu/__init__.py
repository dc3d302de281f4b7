"""Sparse LU with a block-triangular coarse level and a nested-dissection fine level."""

from .errors import (HspluError, InputError, MatrixMarketError, PatternMismatchError,
                     SingularMatrixError, StructuralSingularityError)
from .mmio import mm_read, mm_write
from .numeric import NumericFactor, factor, refactor
from .solve import iterative_refine, residual, solve
from .sparse import CscMatrix, Permutation, Triplets, csc_from_triplets
from .symbolic import SymbolicPlan, analyze

__all__ = [
    "CscMatrix", "Permutation", "Triplets", "csc_from_triplets", "mm_read", "mm_write",
    "analyze", "SymbolicPlan", "factor", "refactor", "NumericFactor", "solve",
    "iterative_refine", "residual", "lu_solve",
    "HspluError", "InputError", "MatrixMarketError", "PatternMismatchError",
    "SingularMatrixError", "StructuralSingularityError",
]


def lu_solve(a: CscMatrix, b, threads: int = 1, pivot_tol: float = 1e-3, **kwargs):
    """Analyze, factor and solve in one call."""
    plan = analyze(a, threads=threads, **kwargs)
    return solve(factor(plan, a, pivot_tol, threads), b)
