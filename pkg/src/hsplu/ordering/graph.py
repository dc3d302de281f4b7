"""Undirected adjacency helpers shared by the orderings."""

from __future__ import annotations

import numpy as np

from ..sparse import CscMatrix


def symmetric_adjacency(a: CscMatrix) -> tuple[np.ndarray, np.ndarray]:
    """CSR adjacency of the graph of ``a + a^T`` without self loops.

    Neighbour lists are sorted ascending.
    """
    n = a.ncols
    rows = a.row_idx
    cols = a.col_indices()
    off = rows != cols
    r = np.concatenate([rows[off], cols[off]])
    c = np.concatenate([cols[off], rows[off]])
    key = np.unique(r * n + c)
    src, dst = np.divmod(key, n)
    xadj = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=xadj[1:])
    return xadj, dst.astype(np.int64)


def induced_adjacency(xadj: np.ndarray, adj: np.ndarray,
                      verts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Adjacency of the subgraph induced by ``verts``, relabelled 0..len-1."""
    n = xadj.size - 1
    local = np.full(n, -1, dtype=np.int64)
    local[verts] = np.arange(verts.size)
    deg = np.diff(xadj)[verts]
    src = np.repeat(np.arange(verts.size), deg)
    first = np.cumsum(deg) - deg
    idx = np.arange(int(deg.sum()), dtype=np.int64) - np.repeat(first - xadj[verts], deg)
    dst = local[adj[idx]]
    keep = dst >= 0
    src, dst = src[keep], dst[keep]
    x = np.zeros(verts.size + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=verts.size), out=x[1:])
    return x, dst.astype(np.int64)
