"""Nested dissection by recursive vertex-separator bisection.

Each bisection grows a breadth-first level structure from a
pseudo-peripheral vertex, takes the smallest level that keeps the two
halves balanced as the separator, and runs one boundary refinement pass
that returns separator vertices touching only one side.  Disconnected
pieces are spread over the two halves by size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..errors import InputError
from ..sparse import CscMatrix, Permutation
from .graph import symmetric_adjacency

BALANCE = 0.55
FREE_SPLIT = 2 / 3


@dataclass(frozen=True)
class NdNode:
    index: int
    lo: int
    hi: int
    parent: int
    children: tuple[int, ...]
    depth: int
    height: int

    @property
    def size(self) -> int:
        return self.hi - self.lo

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class NdTree:
    """Separator tree with nodes stored in post-order (root last)."""

    nleaves: int
    nodes: list[NdNode]
    first_desc: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        first = np.arange(len(self.nodes), dtype=np.int64)
        for node in self.nodes:
            if node.children:
                first[node.index] = first[node.children[0]]
        self.first_desc = first

    @property
    def root(self) -> int:
        return len(self.nodes) - 1

    @property
    def n(self) -> int:
        return self.nodes[-1].hi if self.nodes else 0

    @property
    def leaves(self) -> list[int]:
        return [nd.index for nd in self.nodes if nd.is_leaf]

    @property
    def depth(self) -> int:
        return self.nodes[-1].height

    @property
    def offsets(self) -> np.ndarray:
        """Column boundaries of the nodes in post-order."""
        return np.array([0] + [nd.hi for nd in self.nodes], dtype=np.int64)

    def descendants(self, k: int) -> range:
        """Proper descendants of ``k`` in post-order."""
        return range(int(self.first_desc[k]), k)

    def ancestors(self, k: int) -> list[int]:
        out = []
        p = self.nodes[k].parent
        while p >= 0:
            out.append(p)
            p = self.nodes[p].parent
        return out

    def is_ancestor(self, a: int, k: int) -> bool:
        """True when ``a`` is ``k`` or one of its ancestors."""
        return self.first_desc[a] <= k <= a

    def subtree_leaves(self, k: int) -> list[int]:
        return [d for d in range(int(self.first_desc[k]), k + 1) if self.nodes[d].is_leaf]

    def node_of(self, cols) -> np.ndarray:
        """Node owning each (permuted) column."""
        return np.searchsorted(self.offsets, cols, side="right") - 1

    def validate(self) -> None:
        pos = 0
        for nd in self.nodes:
            assert nd.lo == pos and nd.hi >= nd.lo
            pos = nd.hi
            for c in nd.children:
                assert self.nodes[c].parent == nd.index and c < nd.index
        assert len(self.leaves) == self.nleaves


@njit(cache=True, nogil=True)
def _bfs(xadj, adj, inset, start, level, queue):
    """Level structure of the component of ``start`` inside ``inset``.

    Fills ``level`` (must be -1 on the component) and ``queue`` (visit
    order); returns ``(count, nlevels)``.
    """
    level[start] = 0
    queue[0] = start
    head = 0
    tail = 1
    nlev = 1
    while head < tail:
        v = queue[head]
        head += 1
        for p in range(xadj[v], xadj[v + 1]):
            u = adj[p]
            if inset[u] and level[u] < 0:
                level[u] = level[v] + 1
                if level[u] + 1 > nlev:
                    nlev = level[u] + 1
                queue[tail] = u
                tail += 1
    return tail, nlev


@njit(cache=True, nogil=True)
def _components(xadj, adj, inset, verts, label):
    """Label components of the vertices in ``verts`` (ascending); returns count."""
    queue = np.empty(verts.size, np.int64)
    ncomp = 0
    for s in verts:
        if label[s] >= 0:
            continue
        label[s] = ncomp
        queue[0] = s
        head = 0
        tail = 1
        while head < tail:
            v = queue[head]
            head += 1
            for p in range(xadj[v], xadj[v + 1]):
                u = adj[p]
                if inset[u] and label[u] < 0:
                    label[u] = ncomp
                    queue[tail] = u
                    tail += 1
        ncomp += 1
    return ncomp


@njit(cache=True, nogil=True)
def _degree_in(xadj, adj, inset, v):
    d = 0
    for p in range(xadj[v], xadj[v + 1]):
        if inset[adj[p]]:
            d += 1
    return d


@njit(cache=True, nogil=True)
def _level_bisect(xadj, adj, inset, comp, balance):
    """Bisect one connected vertex set.

    Returns ``side`` over ``comp``: 0 left, 1 right, 2 separator.
    """
    m = comp.size
    n = inset.size
    level = np.full(n, -1, np.int64)
    queue = np.empty(m, np.int64)

    # pseudo-peripheral start: lowest-index vertex of minimum degree
    start = comp[0]
    best = _degree_in(xadj, adj, inset, start)
    for v in comp:
        d = _degree_in(xadj, adj, inset, v)
        if d < best:
            best = d
            start = v
    cnt, nlev = _bfs(xadj, adj, inset, start, level, queue)
    while True:
        cand = -1
        cdeg = 0
        for t in range(cnt):
            v = queue[t]
            if level[v] == nlev - 1:
                d = _degree_in(xadj, adj, inset, v)
                if cand < 0 or d < cdeg or (d == cdeg and v < cand):
                    cand = v
                    cdeg = d
        for t in range(cnt):
            level[queue[t]] = -1
        cnt2, nlev2 = _bfs(xadj, adj, inset, cand, level, queue)
        if nlev2 > nlev:
            start = cand
            nlev = nlev2
            cnt = cnt2
            continue
        for t in range(cnt2):
            level[queue[t]] = -1
        cnt, nlev = _bfs(xadj, adj, inset, start, level, queue)
        break

    sizes = np.zeros(nlev, np.int64)
    for v in comp:
        sizes[level[v]] += 1
    side = np.empty(m, np.int64)
    if nlev < 3:
        # no interior level: peel the start vertex off
        for t in range(m):
            side[t] = 0 if level[comp[t]] == 0 else 2
        return side

    bestk = -1
    bestsz = 0
    fallk = -1
    fallgap = 0
    before = sizes[0]
    for k in range(1, nlev - 1):
        after = m - before - sizes[k]
        rest = m - sizes[k]
        big = max(before, after)
        if big <= balance * rest:
            if bestk < 0 or sizes[k] < bestsz:
                bestk = k
                bestsz = sizes[k]
        gap = abs(before - after)
        if fallk < 0 or gap < fallgap or (gap == fallgap and sizes[k] < sizes[fallk]):
            fallk = k
            fallgap = gap
        before += sizes[k]
    k = bestk if bestk >= 0 else fallk
    for t in range(m):
        lv = level[comp[t]]
        side[t] = 0 if lv < k else (2 if lv == k else 1)
    return side


@njit(cache=True, nogil=True)
def _refine(xadj, adj, verts, side_of, sides):
    """One pass over separator vertices, returning those adjacent to one side only.

    ``side_of`` is a global scratch array (-1 outside ``verts``).
    """
    for t in range(verts.size):
        side_of[verts[t]] = sides[t]
    nl = 0
    nr = 0
    for t in range(verts.size):
        if sides[t] == 0:
            nl += 1
        elif sides[t] == 1:
            nr += 1
    for t in range(verts.size):
        v = verts[t]
        if side_of[v] != 2:
            continue
        hl = 0
        hr = 0
        for p in range(xadj[v], xadj[v + 1]):
            s = side_of[adj[p]]
            if s == 0:
                hl += 1
            elif s == 1:
                hr += 1
        if hr == 0 and (hl > 0 or nl <= nr):
            side_of[v] = 0
            nl += 1
        elif hl == 0:
            side_of[v] = 1
            nr += 1
    for t in range(verts.size):
        sides[t] = side_of[verts[t]]
        side_of[verts[t]] = -1


def _spread(pieces: list[np.ndarray], left: list[np.ndarray], right: list[np.ndarray],
            nl: int, nr: int) -> tuple[int, int]:
    """Greedy assignment of pieces (largest first) to the lighter half."""
    pieces = sorted(pieces, key=lambda c: (-c.size, int(c[0])))
    for c in pieces:
        if nl <= nr:
            left.append(c)
            nl += c.size
        else:
            right.append(c)
            nr += c.size
    return nl, nr


def _split_components(xadj, adj, inset, verts) -> list[np.ndarray]:
    label = np.full(inset.size, -1, np.int64)
    ncomp = _components(xadj, adj, inset, verts, label)
    lab = label[verts]
    order = np.argsort(lab, kind="stable")
    bounds = np.searchsorted(lab[order], np.arange(ncomp + 1))
    return [verts[order[bounds[c]:bounds[c + 1]]] for c in range(ncomp)]


def bisect(xadj: np.ndarray, adj: np.ndarray, verts: np.ndarray,
           balance: float = BALANCE) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split ``verts`` (ascending) into ``(left, right, separator)`` with no left-right edges."""
    n = xadj.size - 1
    verts = np.asarray(verts, np.int64)
    empty = np.zeros(0, np.int64)
    if verts.size == 0:
        return empty, empty, empty
    inset = np.zeros(n, np.bool_)
    inset[verts] = True
    comps = _split_components(xadj, adj, inset, verts)
    comps.sort(key=lambda c: (-c.size, int(c[0])))
    big = comps[0]
    left: list[np.ndarray] = []
    right: list[np.ndarray] = []
    sep = empty
    spread_l: list[np.ndarray] = []
    spread_r: list[np.ndarray] = []
    heavy = max(_spread(comps, spread_l, spread_r, 0, 0)) if len(comps) > 1 else verts.size
    # an empty separator is worth a moderate imbalance
    if len(comps) > 1 and (big.size <= verts.size / 2 or heavy <= FREE_SPLIT * verts.size):
        left, right = spread_l, spread_r
    else:
        inset_c = np.zeros(n, np.bool_)
        inset_c[big] = True
        sides = _level_bisect(xadj, adj, inset_c, big, balance)
        side_of = np.full(n, -1, np.int64)
        _refine(xadj, adj, big, side_of, sides)
        sep = big[sides == 2]
        # re-spread the pieces left after removing the separator
        inset_c[sep] = False
        rest = big[sides != 2]
        pieces = _split_components(xadj, adj, inset_c, rest) if rest.size else []
        lv, rv = big[sides == 0], big[sides == 1]
        l2: list[np.ndarray] = []
        r2: list[np.ndarray] = []
        nl, nr = _spread(pieces, l2, r2, 0, 0)
        if max(nl, nr) < max(lv.size, rv.size):
            left, right = l2, r2
        else:
            left, right = [lv], [rv]
        nl = sum(c.size for c in left)
        nr = sum(c.size for c in right)
        _spread(comps[1:], left, right, nl, nr)
    cat = lambda parts: np.sort(np.concatenate(parts)) if parts else empty
    return cat(left), cat(right), np.sort(sep)


def _is_power_of_two(k: int) -> bool:
    return k >= 1 and (k & (k - 1)) == 0


def nd_from_adjacency(xadj: np.ndarray, adj: np.ndarray, nleaves: int,
                      balance: float = BALANCE) -> tuple[np.ndarray, NdTree]:
    """Dissect a graph; returns ``(order, tree)`` with ``order[k]`` = old vertex at ``k``."""
    n = xadj.size - 1
    if not _is_power_of_two(nleaves):
        raise InputError(f"number of leaves must be a power of two, got {nleaves}")
    if nleaves > max(n, 1):
        raise InputError(f"{nleaves} leaves requested for only {n} columns")
    maxdepth = int(nleaves).bit_length() - 1
    order: list[np.ndarray] = []
    raw: list[dict] = []
    placed = [0]

    def rec(verts: np.ndarray, depth: int) -> int:
        if depth == maxdepth:
            lo = placed[0]
            order.append(verts)
            placed[0] += verts.size
            raw.append(dict(lo=lo, hi=placed[0], children=(), depth=depth))
            return len(raw) - 1
        left, right, sep = bisect(xadj, adj, verts, balance)
        li = rec(left, depth + 1)
        ri = rec(right, depth + 1)
        lo = placed[0]
        order.append(sep)
        placed[0] += sep.size
        raw.append(dict(lo=lo, hi=placed[0], children=(li, ri), depth=depth))
        return len(raw) - 1

    rec(np.arange(n, dtype=np.int64), 0)
    parent = [-1] * len(raw)
    for k, r in enumerate(raw):
        for c in r["children"]:
            parent[c] = k
    nodes = [NdNode(k, r["lo"], r["hi"], parent[k], r["children"], r["depth"],
                    maxdepth - r["depth"]) for k, r in enumerate(raw)]
    full = np.concatenate(order) if order else np.zeros(0, np.int64)
    return full.astype(np.int64), NdTree(nleaves, nodes)


def nd_order(a: CscMatrix, nleaves: int) -> tuple[Permutation, NdTree]:
    """Nested dissection of the graph of ``a + a^T`` into ``nleaves`` leaves.

    Vertices keep ascending order inside each leaf and separator.
    """
    if a.nrows != a.ncols:
        raise InputError(f"nested dissection needs a square matrix, got {a.shape}")
    xadj, adj = symmetric_adjacency(a)
    order, tree = nd_from_adjacency(xadj, adj, nleaves)
    return Permutation.from_order(order), tree
