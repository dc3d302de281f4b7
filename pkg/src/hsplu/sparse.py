"""Compressed sparse column storage, permutations and the 2D block hierarchy.

Every factor and every input block in the solver is a :class:`CscMatrix`.
Indices are 64-bit, values are IEEE doubles.  Structural (explicit) zeros
are kept: they carry pattern information for refactorization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError

INDEX = np.int64


def _as_index(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=INDEX)


def _as_values(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class CscMatrix:
    nrows: int
    ncols: int
    col_ptr: np.ndarray
    row_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nrows", int(self.nrows))
        object.__setattr__(self, "ncols", int(self.ncols))
        object.__setattr__(self, "col_ptr", _as_index(self.col_ptr))
        object.__setattr__(self, "row_idx", _as_index(self.row_idx))
        object.__setattr__(self, "values", _as_values(self.values))

    @property
    def nnz(self) -> int:
        return int(self.col_ptr[-1]) if self.col_ptr.size else 0

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    def validate(self) -> "CscMatrix":
        """Raise :class:`InputError` unless every storage invariant holds."""
        cp, ri = self.col_ptr, self.row_idx
        if cp.shape != (self.ncols + 1,):
            raise InputError(f"col_ptr has length {cp.size}, expected {self.ncols + 1}")
        if cp[0] != 0:
            raise InputError("col_ptr[0] must be 0")
        if np.any(np.diff(cp) < 0):
            raise InputError("col_ptr must be nondecreasing")
        if cp[-1] != ri.size or ri.size != self.values.size:
            raise InputError("col_ptr[-1], len(row_idx) and len(values) disagree")
        if ri.size:
            if ri.min() < 0 or ri.max() >= self.nrows:
                raise InputError("row index out of range")
            # strictly increasing inside each column
            step = np.diff(ri)
            starts = np.zeros(ri.size, dtype=bool)
            starts[cp[:-1][np.diff(cp) > 0]] = True
            if np.any((step <= 0) & ~starts[1:]):
                raise InputError("row indices must be strictly increasing within a column")
        return self

    @classmethod
    def empty(cls, nrows: int, ncols: int) -> "CscMatrix":
        return cls(nrows, ncols, np.zeros(ncols + 1, INDEX), np.zeros(0, INDEX), np.zeros(0))

    @classmethod
    def identity(cls, n: int) -> "CscMatrix":
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    @classmethod
    def from_dense(cls, dense, keep_zeros: bool = False) -> "CscMatrix":
        d = np.asarray(dense, dtype=np.float64)
        if d.ndim != 2:
            raise InputError("dense input must be two-dimensional")
        mask = np.ones(d.shape, bool) if keep_zeros else d != 0
        cols, rows = np.nonzero(mask.T)
        counts = np.bincount(cols, minlength=d.shape[1])
        cp = np.concatenate([[0], np.cumsum(counts)])
        return cls(d.shape[0], d.shape[1], cp, rows, d[rows, cols])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.nrows, self.ncols))
        out[self.row_idx, self.col_indices()] = self.values
        return out

    def col_indices(self) -> np.ndarray:
        """Column index of every stored entry."""
        return np.repeat(np.arange(self.ncols, dtype=INDEX), np.diff(self.col_ptr))

    def column(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.col_ptr[j], self.col_ptr[j + 1]
        return self.row_idx[lo:hi], self.values[lo:hi]

    def with_values(self, values) -> "CscMatrix":
        values = _as_values(values)
        if values.size != self.nnz:
            raise InputError(f"expected {self.nnz} values, got {values.size}")
        return CscMatrix(self.nrows, self.ncols, self.col_ptr, self.row_idx, values)

    def transpose(self) -> "CscMatrix":
        cols = self.col_indices()
        order = np.lexsort((cols, self.row_idx))
        counts = np.bincount(self.row_idx, minlength=self.nrows)
        cp = np.concatenate([[0], np.cumsum(counts)])
        return CscMatrix(self.ncols, self.nrows, cp, cols[order], self.values[order])

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.ncols,):
            raise InputError(f"vector has shape {x.shape}, expected ({self.ncols},)")
        prod = self.values * np.repeat(x, np.diff(self.col_ptr))
        return np.bincount(self.row_idx, weights=prod, minlength=self.nrows).astype(np.float64)

    def max_abs(self) -> float:
        return float(np.abs(self.values).max()) if self.nnz else 0.0

    def norm_inf(self) -> float:
        if not self.nnz:
            return 0.0
        return float(np.bincount(self.row_idx, weights=np.abs(self.values),
                                 minlength=self.nrows).max())

    def same_pattern(self, other: "CscMatrix") -> bool:
        return (self.shape == other.shape
                and np.array_equal(self.col_ptr, other.col_ptr)
                and np.array_equal(self.row_idx, other.row_idx))

    def identical(self, other: "CscMatrix") -> bool:
        """Bitwise equality of pattern and values."""
        return self.same_pattern(other) and (
            self.values.view(np.uint64) == other.values.view(np.uint64)).all()

    def __repr__(self) -> str:
        return f"CscMatrix({self.nrows}x{self.ncols}, nnz={self.nnz})"


@dataclass(frozen=True, eq=False)
class Permutation:
    """A bijection on ``[0, n)``; ``forward[old] = new``."""

    forward: np.ndarray
    inverse: np.ndarray

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        a = np.arange(n, dtype=INDEX)
        return cls(a, a.copy())

    @classmethod
    def from_forward(cls, forward) -> "Permutation":
        fwd = _as_index(forward)
        n = fwd.size
        if n and (fwd.min() < 0 or fwd.max() >= n):
            raise InputError("permutation entry out of range")
        inv = np.full(n, -1, dtype=INDEX)
        inv[fwd] = np.arange(n, dtype=INDEX)
        if n and inv.min() < 0:
            raise InputError("forward map is not a bijection")
        return cls(fwd, inv)

    @classmethod
    def from_order(cls, order) -> "Permutation":
        """Build from an ordering where ``order[k]`` is the old index placed at ``k``."""
        p = cls.from_forward(order)
        return cls(p.inverse, p.forward)

    @property
    def n(self) -> int:
        return int(self.forward.size)

    def then(self, other: "Permutation") -> "Permutation":
        """Apply ``self`` first, then ``other``."""
        if other.n != self.n:
            raise InputError("permutation lengths differ")
        fwd = other.forward[self.forward]
        return Permutation(fwd, self.inverse[other.inverse])

    def inverted(self) -> "Permutation":
        return Permutation(self.inverse, self.forward)

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.forward, np.arange(self.n)))

    def apply(self, x) -> np.ndarray:
        """Return ``y`` with ``y[forward[i]] = x[i]``."""
        x = np.asarray(x)
        y = np.empty_like(x)
        y[self.forward] = x
        return y

    def __eq__(self, other) -> bool:
        return isinstance(other, Permutation) and np.array_equal(self.forward, other.forward)

    def __hash__(self):  # pragma: no cover - permutations are not dict keys
        return hash(self.forward.tobytes())

    def __repr__(self) -> str:
        return f"Permutation(n={self.n})"


@dataclass(eq=False)
class Triplets:
    """Coordinate-format buffer; duplicates are summed on assembly."""

    nrows: int
    ncols: int
    rows: np.ndarray = field(default_factory=lambda: np.zeros(0, INDEX))
    cols: np.ndarray = field(default_factory=lambda: np.zeros(0, INDEX))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def from_entries(cls, nrows: int, ncols: int,
                     entries: Iterable[tuple[int, int, float]]) -> "Triplets":
        entries = list(entries)
        if not entries:
            return cls(nrows, ncols)
        r, c, v = zip(*entries)
        return cls(nrows, ncols, np.asarray(r, INDEX), np.asarray(c, INDEX),
                   np.asarray(v, np.float64))

    @property
    def entries(self) -> list[tuple[int, int, float]]:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    def __len__(self) -> int:
        return int(self.rows.size)


def csc_from_triplets(t: Triplets) -> CscMatrix:
    """Assemble triplets into sorted CSC, summing duplicates.

    Duplicates are summed in ascending value order so the result does not
    depend on the order of the input entries.
    """
    rows, cols, vals = _as_index(t.rows), _as_index(t.cols), _as_values(t.values)
    if not (rows.size == cols.size == vals.size):
        raise InputError("triplet arrays have different lengths")
    bad = np.nonzero((rows < 0) | (rows >= t.nrows) | (cols < 0) | (cols >= t.ncols))[0]
    if bad.size:
        k = int(bad[0])
        raise InputError(
            f"entry {k} ({int(rows[k])}, {int(cols[k])}) out of range for "
            f"{t.nrows}x{t.ncols} matrix")
    order = np.lexsort((vals, rows, cols))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if rows.size:
        first = np.ones(rows.size, dtype=bool)
        first[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        starts = np.nonzero(first)[0]
        vals = np.add.reduceat(vals, starts)
        rows, cols = rows[starts], cols[starts]
    counts = np.bincount(cols, minlength=t.ncols)
    cp = np.concatenate([[0], np.cumsum(counts)])
    return CscMatrix(t.nrows, t.ncols, cp, rows, vals)


def _assemble_unique(nrows: int, ncols: int, rows: np.ndarray,
                     cols: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sort duplicate-free coordinates into CSC order.

    Returns ``(col_ptr, row_idx, order)`` where ``order`` maps output entry
    positions back to input positions.
    """
    order = np.lexsort((rows, cols))
    counts = np.bincount(cols, minlength=ncols)
    cp = np.concatenate([[0], np.cumsum(counts)]).astype(INDEX)
    return cp, rows[order], order


def permute_with_map(a: CscMatrix, rowp: Permutation,
                     colp: Permutation) -> tuple[CscMatrix, np.ndarray]:
    """Permute ``a`` and also return ``src`` with ``result.values == a.values[src]``."""
    if rowp.n != a.nrows or colp.n != a.ncols:
        raise InputError(
            f"permutation sizes ({rowp.n}, {colp.n}) do not match matrix {a.shape}")
    rows = rowp.forward[a.row_idx]
    cols = colp.forward[a.col_indices()]
    cp, ri, order = _assemble_unique(a.nrows, a.ncols, rows, cols)
    return CscMatrix(a.nrows, a.ncols, cp, ri, a.values[order]), order


def permute(a: CscMatrix, rowp: Permutation, colp: Permutation) -> CscMatrix:
    """Move entry ``(i, j)`` of ``a`` to ``(rowp.forward[i], colp.forward[j])``."""
    return permute_with_map(a, rowp, colp)[0]


def submatrix_with_map(a: CscMatrix, rlo: int, rhi: int, clo: int,
                       chi: int) -> tuple[CscMatrix, np.ndarray]:
    """Contiguous block ``a[rlo:rhi, clo:chi]`` plus its source entry map."""
    lo, hi = a.col_ptr[clo], a.col_ptr[chi]
    ri = a.row_idx[lo:hi]
    keep = (ri >= rlo) & (ri < rhi)
    src = np.nonzero(keep)[0] + lo
    cols = a.col_indices()[src] - clo
    counts = np.bincount(cols, minlength=chi - clo)
    cp = np.concatenate([[0], np.cumsum(counts)])
    return CscMatrix(rhi - rlo, chi - clo, cp, a.row_idx[src] - rlo, a.values[src]), src


def _check_offsets(offsets, n: int, what: str) -> np.ndarray:
    off = _as_index(offsets)
    if off.ndim != 1 or off.size < 2:
        raise InputError(f"{what} offsets need at least two entries")
    if off[0] != 0 or off[-1] != n:
        raise InputError(f"{what} offsets must start at 0 and end at {n}")
    if np.any(np.diff(off) < 0):
        raise InputError(f"{what} offsets must be monotone nondecreasing")
    return off


@dataclass(eq=False)
class BlockedMatrix:
    """Two-dimensional grid of CSC blocks; ``None`` marks an empty block."""

    row_offsets: np.ndarray
    col_offsets: np.ndarray
    blocks: list[list[CscMatrix | None]]

    @property
    def nblocks_row(self) -> int:
        return len(self.row_offsets) - 1

    @property
    def nblocks_col(self) -> int:
        return len(self.col_offsets) - 1

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.row_offsets[-1]), int(self.col_offsets[-1])

    @property
    def nnz(self) -> int:
        return sum(b.nnz for row in self.blocks for b in row if b is not None)

    def block(self, i: int, j: int) -> CscMatrix | None:
        return self.blocks[i][j]

    def present(self) -> list[tuple[int, int]]:
        return [(i, j) for i, row in enumerate(self.blocks)
                for j, b in enumerate(row) if b is not None]

    def validate(self) -> "BlockedMatrix":
        for i, j in self.present():
            b = self.blocks[i][j]
            want = (int(self.row_offsets[i + 1] - self.row_offsets[i]),
                    int(self.col_offsets[j + 1] - self.col_offsets[j]))
            if b.shape != want:
                raise InputError(f"block ({i}, {j}) has shape {b.shape}, expected {want}")
            b.validate()
        return self

    def reassemble(self) -> CscMatrix:
        nr, nc = self.shape
        rows, cols, vals = [], [], []
        for i, j in self.present():
            b = self.blocks[i][j]
            rows.append(b.row_idx + self.row_offsets[i])
            cols.append(b.col_indices() + self.col_offsets[j])
            vals.append(b.values)
        if not rows:
            return CscMatrix.empty(nr, nc)
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        cp, ri, order = _assemble_unique(nr, nc, r, c)
        return CscMatrix(nr, nc, cp, ri, v[order])


def extract_blocks_with_map(a: CscMatrix, row_offsets: Sequence[int],
                            col_offsets: Sequence[int]):
    """Split ``a`` along the given offsets.

    Returns the :class:`BlockedMatrix` and a grid of source maps such that
    ``blocks[i][j].values == a.values[maps[i][j]]``.
    """
    roff = _check_offsets(row_offsets, a.nrows, "row")
    coff = _check_offsets(col_offsets, a.ncols, "column")
    nbr, nbc = roff.size - 1, coff.size - 1
    cols = a.col_indices()
    bi = np.searchsorted(roff, a.row_idx, side="right") - 1
    bj = np.searchsorted(coff, cols, side="right") - 1
    key = bi * nbc + bj
    # entries are already column-major; a stable sort on the block key keeps
    # each block in CSC order
    order = np.argsort(key, kind="stable")
    skey = key[order]
    bounds = np.searchsorted(skey, np.arange(nbr * nbc + 1))
    blocks: list[list[CscMatrix | None]] = [[None] * nbc for _ in range(nbr)]
    maps: list[list[np.ndarray | None]] = [[None] * nbc for _ in range(nbr)]
    for k in np.nonzero(bounds[1:] > bounds[:-1])[0]:
        i, j = divmod(int(k), nbc)
        src = order[bounds[k]:bounds[k + 1]]
        r = a.row_idx[src] - roff[i]
        c = cols[src] - coff[j]
        ncol = int(coff[j + 1] - coff[j])
        cp = np.concatenate([[0], np.cumsum(np.bincount(c, minlength=ncol))])
        blocks[i][j] = CscMatrix(int(roff[i + 1] - roff[i]), ncol, cp, r, a.values[src])
        maps[i][j] = src
    return BlockedMatrix(roff, coff, blocks), maps


def extract_blocks(a: CscMatrix, row_offsets: Sequence[int],
                   col_offsets: Sequence[int]) -> BlockedMatrix:
    return extract_blocks_with_map(a, row_offsets, col_offsets)[0]


def vstack_columns(parts: Sequence[tuple[CscMatrix, int]], nrows: int) -> CscMatrix:
    """Stack blocks with equal column counts, shifting each by its row offset."""
    ncols = parts[0][0].ncols
    rows, cols, vals = [], [], []
    for b, off in parts:
        rows.append(b.row_idx + off)
        cols.append(b.col_indices())
        vals.append(b.values)
    r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    cp, ri, order = _assemble_unique(nrows, ncols, r, c)
    return CscMatrix(nrows, ncols, cp, ri, v[order])
