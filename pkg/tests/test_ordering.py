import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.sparse import csc_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from hsplu.errors import InputError, StructuralSingularityError
from hsplu.generators import grid5
from hsplu.ordering import amd_order, bottleneck_value, btf_scc, mwcm, nd_order
from hsplu.ordering.btf import scc_labels
from hsplu.sparse import CscMatrix, Permutation, permute
from oracles import brute_bottleneck, elimination_fill, min_balanced_separator

IDENT = Permutation.identity


def nonsingular_pattern(rng, n, density):
    d = np.where(rng.random((n, n)) < density, rng.uniform(-1, 1, (n, n)), 0.0)
    spine = rng.permutation(n)
    d[spine, np.arange(n)] = rng.uniform(0.1, 2.0, n) * rng.choice([-1, 1], n)
    return d


def fill_count(a: CscMatrix, p: Permutation) -> int:
    """Lower fill entries of the symmetrized pattern under ``p``."""
    b = permute(a, p, p).to_dense() != 0
    sym = b | b.T
    low, _ = elimination_fill(sym)
    return int(low.sum() - np.tril(sym, -1).sum())


# ---------------------------------------------------------------- matching

def test_mwcm_keeps_dominant_diagonal():
    d = np.array([[5.0, 1, 0], [1, 4, 2], [0, 1, 6]])
    a = CscMatrix.from_dense(d)
    p = mwcm(a)
    assert bottleneck_value(a, p) == bottleneck_value(a, IDENT(3)) == 4.0


def test_mwcm_forced_swap():
    a = CscMatrix.from_dense(np.array([[0.0, 5.0], [3.0, 0.0]]))
    p = mwcm(a)
    assert p.forward.tolist() == [1, 0]
    diag = np.diag(permute(a, p, IDENT(2)).to_dense())
    assert diag.tolist() == [3.0, 5.0]
    assert bottleneck_value(a, p) == 3.0


@pytest.mark.parametrize("seed", range(4))
def test_mwcm_bottleneck_brute_force_n8(seed):
    rng = np.random.default_rng(seed)
    d = nonsingular_pattern(rng, 8, 0.35)
    a = CscMatrix.from_dense(d)
    assert bottleneck_value(a, mwcm(a)) == pytest.approx(brute_bottleneck(d), rel=0, abs=0)


@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_mwcm_bottleneck_brute_force_small(n, seed):
    rng = np.random.default_rng(seed)
    d = nonsingular_pattern(rng, n, 0.4)
    a = CscMatrix.from_dense(d)
    p = mwcm(a)
    assert np.all(np.diag(permute(a, p, IDENT(n)).to_dense()) != 0)
    assert bottleneck_value(a, p) == brute_bottleneck(d)


def test_mwcm_structurally_singular():
    d = np.array([[1.0, 1, 0], [1, 1, 0], [1, 1, 0]])
    with pytest.raises(StructuralSingularityError) as ei:
        mwcm(CscMatrix.from_dense(d))
    assert ei.value.cardinality == 2


def test_mwcm_deterministic(rng):
    a = CscMatrix.from_dense(nonsingular_pattern(rng, 40, 0.1))
    assert mwcm(a) == mwcm(a)


# --------------------------------------------------------------------- BTF

def test_btf_upper_triangular_unit_blocks():
    d = np.triu(np.ones((5, 5)))
    p, offs = btf_scc(CscMatrix.from_dense(d))
    assert offs.tolist() == [0, 1, 2, 3, 4, 5]
    b = permute(CscMatrix.from_dense(d), p, p).to_dense()
    assert np.all(np.tril(b, -1) == 0)


def test_btf_single_cycle():
    d = np.eye(6) + np.roll(np.eye(6), 1, axis=1)
    p, offs = btf_scc(CscMatrix.from_dense(d))
    assert offs.tolist() == [0, 6]


def _block_lower_empty(b: np.ndarray, offs) -> bool:
    blk = np.repeat(np.arange(len(offs) - 1), np.diff(offs))
    r, c = np.nonzero(b)
    return bool(np.all(blk[r] <= blk[c]))


@given(st.integers(1, 25), st.floats(0.02, 0.3), st.integers(0, 2**31 - 1))
def test_btf_block_upper_and_scc_count(n, density, seed):
    rng = np.random.default_rng(seed)
    d = nonsingular_pattern(rng, n, density)
    a = CscMatrix.from_dense(d)
    a1 = permute(a, mwcm(a), IDENT(n))
    p, offs = btf_scc(a1)
    b = permute(a1, p, p).to_dense()
    assert _block_lower_empty(b, offs)
    g = nx.DiGraph()
    g.add_nodes_from(range(n))
    r, c = np.nonzero(a1.to_dense())
    g.add_edges_from(zip(c.tolist(), r.tolist()))
    sccs = list(nx.strongly_connected_components(g))
    assert len(sccs) == len(offs) - 1
    assert sorted(len(s) for s in sccs) == sorted(np.diff(offs).tolist())


@given(st.integers(2, 25), st.integers(0, 2**31 - 1))
def test_btf_independent_of_matching(n, seed):
    rng = np.random.default_rng(seed)
    d = nonsingular_pattern(rng, n, 0.12)
    a = CscMatrix.from_dense(d)
    m_ours = mwcm(a)
    match = maximum_bipartite_matching(csc_matrix(d != 0).tocsr(), perm_type="row")
    # match[j] = row matched to column j
    fwd = np.empty(n, np.int64)
    fwd[match] = np.arange(n)
    m_other = Permutation.from_forward(fwd)
    sizes = []
    for m in (m_ours, m_other):
        a1 = permute(a, m, IDENT(n))
        assert np.all(np.diag(a1.to_dense()) != 0)
        sizes.append(sorted(np.diff(btf_scc(a1)[1]).tolist()))
    assert sizes[0] == sizes[1]


def test_scc_labels_count():
    d = np.eye(4)
    assert scc_labels(CscMatrix.from_dense(d))[1] == 4


# --------------------------------------------------------------------- AMD

def test_amd_diagonal_identity():
    assert amd_order(CscMatrix.identity(7)).is_identity()


def test_amd_tridiagonal_no_fill():
    d = np.eye(10) + np.eye(10, k=1) + np.eye(10, k=-1)
    a = CscMatrix.from_dense(d)
    assert fill_count(a, amd_order(a)) == 0


def test_amd_arrowhead():
    d = np.eye(7)
    d[0, :] = 1
    d[:, 0] = 1
    a = CscMatrix.from_dense(d)
    assert fill_count(a, IDENT(7)) == 15
    p = amd_order(a)
    assert fill_count(a, p) == 0
    # the hub may share the minimum degree with the last leaf; it is never eliminated
    # before the other leaves
    assert p.forward[0] >= 5


@given(st.integers(1, 40), st.floats(0.0, 0.3), st.integers(0, 2**31 - 1))
def test_amd_valid_and_deterministic(n, density, seed):
    rng = np.random.default_rng(seed)
    d = (rng.random((n, n)) < density).astype(float) + np.eye(n)
    a = CscMatrix.from_dense(d)
    p = amd_order(a)
    assert sorted(p.forward.tolist()) == list(range(n))
    assert amd_order(a) == p


def test_amd_reduces_grid_fill():
    a = grid5(12)
    assert fill_count(a, amd_order(a)) < 0.5 * fill_count(a, IDENT(a.ncols))


# ---------------------------------------------------------------------- ND

def _leaf_coupling(a: CscMatrix, perm: Permutation, tree) -> int:
    b = permute(a, perm, perm)
    node = tree.node_of(np.arange(a.ncols))
    leaf = np.array([tree.nodes[k].is_leaf for k in range(len(tree.nodes))])
    r, c = b.row_idx, b.col_indices()
    nr, nc = node[r], node[c]
    return int(np.sum(leaf[nr] & leaf[nc] & (nr != nc)))


def test_nd_single_leaf():
    a = grid5(4)
    p, tree = nd_order(a, 1)
    assert p.is_identity() and len(tree.nodes) == 1 and tree.nodes[0].size == 16


def test_nd_grid_separator_is_grid_line():
    a = grid5(8)
    p, tree = nd_order(a, 2)
    assert [nd.size for nd in tree.nodes] == [28, 28, 8]
    assert _leaf_coupling(a, p, tree) == 0


def test_nd_path_graph():
    d = np.eye(15) + np.eye(15, k=1) + np.eye(15, k=-1)
    p, tree = nd_order(CscMatrix.from_dense(d), 4)
    seps = [nd.size for nd in tree.nodes if not nd.is_leaf]
    leaves = [nd.size for nd in tree.nodes if nd.is_leaf]
    assert seps == [1, 1, 1]
    assert all(2 <= s <= 4 for s in leaves) and sum(leaves) == 12


@pytest.mark.parametrize("bad", [3, 6, 0])
def test_nd_rejects_non_power_of_two(bad):
    with pytest.raises(InputError):
        nd_order(grid5(4), bad)


def test_nd_rejects_too_many_leaves():
    with pytest.raises(InputError):
        nd_order(grid5(2), 8)


@given(st.integers(4, 40), st.sampled_from([1, 2, 4, 8]), st.floats(0.0, 0.2),
       st.integers(0, 2**31 - 1))
def test_nd_structure_properties(n, nleaves, density, seed):
    if nleaves > n:
        return
    rng = np.random.default_rng(seed)
    d = (rng.random((n, n)) < density).astype(float) + np.eye(n)
    a = CscMatrix.from_dense(d)
    p, tree = nd_order(a, nleaves)
    tree.validate()
    assert tree.nleaves == nleaves and len(tree.leaves) == nleaves
    assert _leaf_coupling(a, p, tree) == 0
    for nd in tree.nodes:
        for dsc in tree.descendants(nd.index):
            assert tree.nodes[dsc].hi <= nd.lo
    # no coupling between any two nodes that are not in an ancestor relation
    b = permute(a, p, p)
    node = tree.node_of(np.arange(n))
    for r, c in zip(node[b.row_idx].tolist(), node[b.col_indices()].tolist()):
        assert tree.is_ancestor(r, c) or tree.is_ancestor(c, r)
    assert nd_order(a, nleaves)[0] == p


def _random_connected(rng, n, extra):
    g = nx.random_labeled_tree(n, seed=int(rng.integers(1 << 30))) \
        if hasattr(nx, "random_labeled_tree") else nx.random_tree(n, seed=int(rng.integers(1 << 30)))
    for _ in range(extra):
        u, v = rng.integers(0, n, 2)
        if u != v:
            g.add_edge(int(u), int(v))
    return g


@pytest.mark.parametrize("seed", range(30))
def test_nd_separator_quality_vs_exhaustive(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, 15))
    g = _random_connected(rng, n, int(rng.integers(0, n)))
    d = np.eye(n)
    for u, v in g.edges:
        d[u, v] = d[v, u] = 1.0
    _, tree = nd_order(CscMatrix.from_dense(d), 2)
    ours = tree.nodes[tree.root].size
    adj = [set(g.neighbors(v)) for v in range(n)]
    best = min_balanced_separator(adj)
    assert ours <= 3 * max(best, 1)


def test_nd_grid_separator_quality():
    for k, best in [(3, 3), (4, 4)]:
        g = nx.grid_2d_graph(k, k)
        g = nx.convert_node_labels_to_integers(g)
        assert min_balanced_separator([set(g.neighbors(v)) for v in range(k * k)]) == best
        _, tree = nd_order(grid5(k), 2)
        assert tree.nodes[tree.root].size <= 3 * best
