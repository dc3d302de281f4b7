import numpy as np
import pytest
from hypothesis import given, strategies as st

from hsplu.errors import InputError
from hsplu.ordering import nd_order
from hsplu.sparse import (CscMatrix, Permutation, Triplets, csc_from_triplets,
                          extract_blocks, permute)


def random_dense(rng, n, m=None, density=0.3):
    m = n if m is None else m
    mask = rng.random((n, m)) < density
    return np.where(mask, rng.uniform(-1, 1, (n, m)), 0.0)


@st.composite
def triplet_lists(draw, max_n=12, max_nnz=40):
    nr = draw(st.integers(1, max_n))
    nc = draw(st.integers(1, max_n))
    k = draw(st.integers(0, max_nnz))
    rows = draw(st.lists(st.integers(0, nr - 1), min_size=k, max_size=k))
    cols = draw(st.lists(st.integers(0, nc - 1), min_size=k, max_size=k))
    vals = draw(st.lists(st.integers(-9, 9).map(float), min_size=k, max_size=k))
    return nr, nc, rows, cols, vals


def test_triplets_diagonal():
    a = csc_from_triplets(Triplets.from_entries(2, 2, [(0, 0, 1.0), (1, 1, 2.0)]))
    assert a.col_ptr.tolist() == [0, 1, 2]
    assert a.row_idx.tolist() == [0, 1]
    assert a.values.tolist() == [1.0, 2.0]


def test_triplets_duplicates_summed():
    a = csc_from_triplets(Triplets.from_entries(1, 1, [(0, 0, 1.0), (0, 0, 2.0)]))
    assert a.nnz == 1 and a.values[0] == 3.0


def test_triplets_dense_accumulation_oracle(rng):
    rows = rng.integers(0, 20, 50)
    cols = rng.integers(0, 20, 50)
    vals = rng.uniform(-1, 1, 50)
    a = csc_from_triplets(Triplets(20, 20, rows, cols, vals)).validate()
    dense = np.zeros((20, 20))
    np.add.at(dense, (rows, cols), vals)
    assert np.allclose(a.to_dense(), dense, rtol=0, atol=1e-15)
    assert a.nnz == len(set(zip(rows.tolist(), cols.tolist())))


def test_triplets_out_of_range_names_entry():
    with pytest.raises(InputError, match="entry 1"):
        csc_from_triplets(Triplets(2, 2, [0, 5], [0, 1], [1.0, 1.0]))


@given(triplet_lists(), st.randoms())
def test_triplets_order_insensitive(t, rnd):
    nr, nc, rows, cols, vals = t
    a = csc_from_triplets(Triplets(nr, nc, rows, cols, vals))
    idx = list(range(len(rows)))
    rnd.shuffle(idx)
    b = csc_from_triplets(Triplets(nr, nc, [rows[i] for i in idx], [cols[i] for i in idx],
                                   [vals[i] for i in idx]))
    a.validate()
    assert a.identical(b)


def test_validate_rejects_unsorted_rows():
    a = CscMatrix(2, 1, [0, 2], [1, 0], [1.0, 2.0])
    with pytest.raises(InputError):
        a.validate()


def test_from_dense_round_trip(rng):
    d = random_dense(rng, 7, 5)
    assert np.array_equal(CscMatrix.from_dense(d).to_dense(), d)


def test_permutation_from_forward_rejects_non_bijection():
    with pytest.raises(InputError):
        Permutation.from_forward([0, 0, 1])


def test_permutation_compose_and_invert(rng):
    p = Permutation.from_forward(rng.permutation(9))
    q = Permutation.from_forward(rng.permutation(9))
    x = rng.standard_normal(9)
    assert np.array_equal(p.then(q).apply(x), q.apply(p.apply(x)))
    assert p.then(p.inverted()).is_identity()
    assert np.array_equal(p.inverse[p.forward], np.arange(9))


def test_permute_identity_unchanged(rng):
    a = CscMatrix.from_dense(random_dense(rng, 6))
    i = Permutation.identity(6)
    assert permute(a, i, i).identical(a)


def test_permute_reversal_on_diagonal():
    a = CscMatrix.from_dense(np.diag([1.0, 2.0, 3.0]))
    r = Permutation.from_forward([2, 1, 0])
    b = permute(a, r, Permutation.identity(3)).validate()
    assert b.row_idx.tolist() == [2, 1, 0]
    assert b.values.tolist() == [1.0, 2.0, 3.0]


def test_permute_dense_oracle(rng):
    d = random_dense(rng, 15)
    a = CscMatrix.from_dense(d)
    p = Permutation.from_forward(rng.permutation(15))
    q = Permutation.from_forward(rng.permutation(15))
    b = permute(a, p, q).validate().to_dense()
    expect = np.zeros_like(d)
    expect[np.ix_(p.forward, q.forward)] = d
    assert np.array_equal(b, expect)


def test_permute_dimension_mismatch(rng):
    a = CscMatrix.from_dense(random_dense(rng, 4))
    with pytest.raises(InputError):
        permute(a, Permutation.identity(3), Permutation.identity(4))


@given(st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_permute_inverse_round_trip_bitwise(n, seed):
    rng = np.random.default_rng(seed)
    a = CscMatrix.from_dense(random_dense(rng, n, density=0.4))
    p = Permutation.from_forward(rng.permutation(n))
    q = Permutation.from_forward(rng.permutation(n))
    back = permute(permute(a, p, q), p.inverted(), q.inverted())
    assert back.identical(a)


def test_extract_blocks_diagonal():
    a = CscMatrix.from_dense(np.diag([1.0, 2, 3, 4]))
    bm = extract_blocks(a, [0, 2, 4], [0, 2, 4]).validate()
    assert bm.present() == [(0, 0), (1, 1)]
    assert bm.block(0, 1) is None and bm.block(1, 0) is None


def test_extract_blocks_full():
    a = CscMatrix.from_dense(np.ones((4, 4)))
    bm = extract_blocks(a, [0, 2, 4], [0, 2, 4])
    assert len(bm.present()) == 4 and bm.nnz == 16


def test_extract_blocks_nd_offsets_round_trip(rng):
    d = random_dense(rng, 30, density=0.1) + np.eye(30)
    a = CscMatrix.from_dense(d)
    perm, tree = nd_order(a, 4)
    b = permute(a, perm, perm)
    bm = extract_blocks(b, tree.offsets, tree.offsets).validate()
    assert bm.reassemble().identical(b)


def test_extract_blocks_rejects_non_monotone():
    a = CscMatrix.identity(4)
    with pytest.raises(InputError):
        extract_blocks(a, [0, 3, 2, 4], [0, 4])


@given(st.integers(1, 15), st.lists(st.integers(0, 15), max_size=4), st.integers(0, 2**31 - 1))
def test_extract_reassemble_identity(n, cuts, seed):
    rng = np.random.default_rng(seed)
    a = CscMatrix.from_dense(random_dense(rng, n, density=0.3))
    offs = sorted({0, n} | {c for c in cuts if c <= n})
    assert extract_blocks(a, offs, offs).reassemble().identical(a)


def test_matvec_and_norms(rng):
    d = random_dense(rng, 8, 6)
    a = CscMatrix.from_dense(d)
    x = rng.standard_normal(6)
    assert np.allclose(a.matvec(x), d @ x, atol=1e-14)
    assert np.isclose(a.norm_inf(), np.abs(d).sum(axis=1).max())
    assert np.array_equal(a.transpose().to_dense(), d.T)
