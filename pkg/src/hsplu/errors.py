"""Exception types raised by the solver."""

from __future__ import annotations


class HspluError(Exception):
    """Base class for all solver errors."""


class InputError(HspluError, ValueError):
    """Malformed input: bad indices, dimensions, offsets or parameters."""


class MatrixMarketError(InputError):
    """A Matrix Market file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StructuralSingularityError(HspluError):
    """The matrix has no perfect matching (structurally rank deficient)."""

    def __init__(self, n: int, cardinality: int):
        self.n = n
        self.cardinality = cardinality
        super().__init__(
            f"matrix is structurally singular: maximum matching has "
            f"{cardinality} of {n} columns"
        )


class SingularMatrixError(HspluError):
    """A column had no usable pivot during numeric factorization."""

    def __init__(self, column: int, where: str = ""):
        self.column = column
        self.where = where
        suffix = f" ({where})" if where else ""
        super().__init__(f"numerically singular at column {column}{suffix}")


class PatternMismatchError(HspluError):
    """A matrix does not share the sparsity pattern of the analyzed one."""

    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(message)
