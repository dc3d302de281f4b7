"""Synthetic test matrices: grids, scrambled block-diagonal systems, arrowheads."""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .sparse import CscMatrix, Triplets, csc_from_triplets


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _dominant(n: int, rows, cols, vals, margin: float = 1.0) -> CscMatrix:
    """Add a diagonal that makes every column strictly dominant."""
    rows = np.asarray(rows, np.int64)
    cols = np.asarray(cols, np.int64)
    vals = np.asarray(vals, np.float64)
    off = rows != cols
    colsum = np.bincount(cols[off], np.abs(vals[off]), minlength=n)
    rowsum = np.bincount(rows[off], np.abs(vals[off]), minlength=n)
    diag = np.maximum(colsum, rowsum) + margin
    r = np.concatenate([rows[off], np.arange(n)])
    c = np.concatenate([cols[off], np.arange(n)])
    v = np.concatenate([vals[off], diag])
    return csc_from_triplets(Triplets(n, n, r, c, v))


def grid5(k: int, seed=0) -> CscMatrix:
    """Unsymmetric 5-point operator on a ``k x k`` grid, diagonally dominant."""
    if k < 1:
        raise InputError("grid side must be positive")
    rng = _rng(seed)
    idx = np.arange(k * k).reshape(k, k)
    pairs = [(idx[:, :-1], idx[:, 1:]), (idx[:-1, :], idx[1:, :])]
    rows, cols = [], []
    for a, b in pairs:
        rows += [a.ravel(), b.ravel()]
        cols += [b.ravel(), a.ravel()]
    r = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    c = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    v = -rng.uniform(0.5, 1.5, r.size)
    return _dominant(k * k, r, c, v)


def block_diagonal(nblocks: int = 40, min_size: int = 2, max_size: int = 30,
                   coupling: float = 0.5, seed=0, scramble: bool = True) -> CscMatrix:
    """Strongly connected diagonal blocks with upper coupling, rows and columns scrambled."""
    if nblocks < 1 or min_size < 1 or max_size < min_size:
        raise InputError("invalid block-diagonal generator parameters")
    rng = _rng(seed)
    sizes = rng.integers(min_size, max_size + 1, nblocks)
    offs = np.concatenate([[0], np.cumsum(sizes)])
    n = int(offs[-1])
    rows, cols = [], []
    for b in range(nblocks):
        lo, s = int(offs[b]), int(sizes[b])
        if s > 1:
            cyc = np.arange(s)
            rows.append(lo + cyc)
            cols.append(lo + np.roll(cyc, 1))
            extra = rng.integers(0, s, (2, 2 * s))
            rows.append(lo + extra[0])
            cols.append(lo + extra[1])
    ncoup = int(coupling * n)
    if nblocks > 1 and ncoup:
        bi = rng.integers(0, nblocks - 1, ncoup)
        bj = bi + 1 + (rng.random(ncoup) * (nblocks - 1 - bi)).astype(np.int64)
        rows.append(offs[bi] + (rng.random(ncoup) * sizes[bi]).astype(np.int64))
        cols.append(offs[bj] + (rng.random(ncoup) * sizes[bj]).astype(np.int64))
    r = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    c = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    keep = r != c
    r, c = r[keep], c[keep]
    key = np.unique(c * n + r)
    c, r = np.divmod(key, n)
    v = rng.uniform(-1.0, 1.0, r.size)
    a = _dominant(n, r, c, v)
    if not scramble:
        return a
    pr = rng.permutation(n)
    pc = rng.permutation(n)
    rr = pr[a.row_idx]
    cc = pc[a.col_indices()]
    return csc_from_triplets(Triplets(n, n, rr, cc, a.values))


def arrowhead(n: int = 2000, seed=0) -> CscMatrix:
    """Dominant arrowhead with the dense row and column first."""
    if n < 2:
        raise InputError("arrowhead needs n >= 2")
    rng = _rng(seed)
    i = np.arange(1, n)
    r = np.concatenate([i, np.zeros(n - 1, np.int64)])
    c = np.concatenate([np.zeros(n - 1, np.int64), i])
    v = rng.uniform(-1.0, 1.0, r.size)
    return _dominant(n, r, c, v)


def random_nonsingular(n: int, density: float, seed=0) -> CscMatrix:
    """Random unsymmetric matrix with a permuted diagonal of magnitude in [1, 2].

    The permutation guarantees structural nonsingularity.
    """
    if n < 1 or not 0.0 <= density <= 1.0:
        raise InputError("invalid random matrix parameters")
    rng = _rng(seed)
    mask = rng.random((n, n)) < density
    dense = np.where(mask, rng.uniform(-1.0, 1.0, (n, n)), 0.0)
    spine = rng.permutation(n)
    dense[spine, np.arange(n)] = rng.choice([-1.0, 1.0], n) * rng.uniform(1.0, 2.0, n)
    return CscMatrix.from_dense(dense)


def perturb(a: CscMatrix, scale: float = 0.05, seed=0) -> CscMatrix:
    """Same pattern, values scaled by ``1 + scale * U(-1, 1)``."""
    rng = _rng(seed)
    return a.with_values(a.values * (1.0 + scale * rng.uniform(-1.0, 1.0, a.nnz)))


def parse_spec(spec: str, seed=0) -> tuple[str, CscMatrix]:
    """Build a matrix from ``grid:K``, ``blockdiag[:NBLOCKS]`` or ``arrowhead[:N]``."""
    name, _, arg = spec.partition(":")
    try:
        if name == "grid":
            k = int(arg)
            return f"grid{k}", grid5(k, seed)
        if name == "blockdiag":
            nb = int(arg) if arg else 40
            return f"blockdiag{nb}", block_diagonal(nb, seed=seed)
        if name == "arrowhead":
            n = int(arg) if arg else 2000
            return f"arrowhead{n}", arrowhead(n, seed)
    except ValueError as err:
        raise InputError(f"bad generator spec '{spec}': {err}") from None
    raise InputError(f"unknown generator '{spec}' (use grid:K, blockdiag[:N] or arrowhead[:N])")


def synthetic_suite(seed=0, max_grid: int = 100) -> list[tuple[str, CscMatrix]]:
    """Grids up to ``max_grid**2`` unknowns, a block-diagonal system and an arrowhead."""
    out = [(f"grid{k}", grid5(k, seed)) for k in (8, 32, 64) if k <= max_grid]
    if max_grid >= 100:
        out.append((f"grid{max_grid}", grid5(max_grid, seed)))
    out.append(("blockdiag", block_diagonal(60, seed=seed)))
    out.append(("blockdiag_big", block_diagonal(6, 150, 400, seed=seed)))
    out.append(("arrowhead", arrowhead(2000, seed)))
    return out
