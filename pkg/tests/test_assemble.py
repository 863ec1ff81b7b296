import numpy as np
import pytest
import scipy.io
from hypothesis import given, settings, strategies as st

from adacoarse import oracle
from adacoarse.assemble import (AffineBasis, build_coarse_system, build_restriction_matrix, expanded_col,
                                expanded_row, hash_key, hash_keys, prolongate, reduce_triplets,
                                restrict_gradient, to_bsr, transform_triplet, transform_triplets,
                                write_matrix_market)
from adacoarse.coarsen import identity_classification
from adacoarse.triplets import Triplets
from adacoarse.verify import classification_from_labels, galerkin_mismatch, random_classification, random_spd_triplets


def test_hash_key_examples():
    assert hash_key(1, 2) == 0x0000000100000002
    assert hash_key(0, 0) == 0
    assert hash_key(2, 0) > hash_key(1, 2**32 - 1)
    with pytest.raises(OverflowError):
        hash_key(2**32, 0)
    with pytest.raises(OverflowError):
        hash_keys([0, 2**32], [0, 0])


def test_reduce_examples():
    A, B = np.eye(3), np.arange(9.0).reshape(3, 3)
    r = reduce_triplets(Triplets([0, 0], [1, 1], [A, B]))
    assert len(r) == 1 and np.array_equal(r.blocks[0], A + B)
    t = Triplets([3, 0, 1], [0, 2, 1], [A, 2 * A, 3 * A])
    r = reduce_triplets(t)
    assert list(zip(r.rows.tolist(), r.cols.tolist())) == [(0, 2), (1, 1), (3, 0)]
    assert np.array_equal(r.to_dense(4), t.to_dense(4))


def test_reduce_matches_dense_accumulation():
    rng = np.random.default_rng(0)
    t = Triplets(rng.integers(0, 10, 1000), rng.integers(0, 10, 1000), rng.standard_normal((1000, 3, 3)))
    r = reduce_triplets(t)
    assert len(set(zip(r.rows.tolist(), r.cols.tolist()))) == len(r)
    assert np.abs(r.to_dense(10) - t.to_dense(10)).max() <= 1e-13 * np.abs(t.to_dense(10)).max()
    keys = hash_keys(r.rows, r.cols)
    assert np.all(np.diff(keys.astype(np.float64)) > 0)


def test_restrict_examples():
    g = np.random.default_rng(1).standard_normal(12)
    assert np.array_equal(restrict_gradient(g, identity_classification(4), AffineBasis(np.zeros((4, 3)))), g)
    cls = classification_from_labels([0, 0], [False])
    gc = restrict_gradient([[1, 0, 0], [0, 1, 0]], cls, AffineBasis(np.zeros((2, 3))))
    assert gc.tolist() == [1, 1, 0]
    cls = classification_from_labels([0], [True])
    gc = restrict_gradient([[0, 0, 1]], cls, AffineBasis([[2, 0, 0]]))
    assert gc.reshape(4, 3).tolist() == [[0, 0, 2], [0, 0, 0], [0, 0, 0], [0, 0, 1]]


def test_transform_examples():
    B = np.arange(9.0).reshape(3, 3)
    cls = classification_from_labels([2, 5, 0, 1, 3, 4], [False] * 6)
    out = transform_triplet((0, 1, B), cls, AffineBasis(np.zeros((6, 3))))
    assert len(out) == 1 and (out[0].row, out[0].col) == (2, 5) and np.array_equal(out[0].block, B)
    cls = classification_from_labels([0, 1], [True, True])
    assert len(transform_triplet((0, 1, B), cls, AffineBasis(np.ones((2, 3))))) == 16
    assert expanded_row(7, 5, 6) == 14
    m2 = 6
    assert expanded_col(m2, 5, 6) == 5 + (m2 - 5) * 4 + 2


def test_mixed_block_layout():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((3, 3))
    aff = AffineBasis(X)
    # vertex 0 -> 3-DoF node 0, vertex 1 -> 12-DoF node, vertex 2 -> another 3-DoF node
    cls = classification_from_labels([0, 1, 2], [False, True, False])
    assert cls.n3 == 2 and cls.fine_map.tolist() == [0, 2, 1]
    B = rng.standard_normal((3, 3))
    out = transform_triplet((0, 1, B), cls, aff)
    assert [(t.row, t.col) for t in out] == [(0, 2 + K) for K in range(4)]
    assert all(np.allclose(t.block, X[1].tolist()[K] * B if K < 3 else B) for K, t in enumerate(out))
    out = transform_triplet((1, 2, B), cls, aff)
    assert [(t.row, t.col) for t in out] == [(2 + K, 1) for K in range(4)]
    out = transform_triplet((1, 1, B), cls, aff)
    assert [(t.row, t.col) for t in out] == [(2 + K // 4, 2 + K % 4) for K in range(16)]


def test_transform_keeps_exclusive_sum_layout():
    rng = np.random.default_rng(3)
    cls = classification_from_labels([0, 1, 1, 2], [False, True, False])
    aff = AffineBasis(rng.standard_normal((4, 3)))
    t = Triplets([0, 1, 3, 2], [3, 2, 1, 0], rng.standard_normal((4, 3, 3)))
    whole = transform_triplets(t, cls, aff)
    parts = Triplets.concat([Triplets.from_list(transform_triplet(x, cls, aff)) for x in t])
    assert np.array_equal(whole.rows, parts.rows) and np.array_equal(whole.blocks, parts.blocks)


def test_coarse_system_examples():
    rng = np.random.default_rng(4)
    H = random_spd_triplets(rng, 5)
    g = rng.standard_normal(15)
    sys_ = build_coarse_system(H, g, identity_classification(5), AffineBasis(np.zeros((5, 3))))
    assert np.array_equal(sys_.hessian.to_dense(5), H.to_dense(5)) and np.array_equal(sys_.gradient, g)
    m = np.array([1.0, 2.0, 3.5])
    M = Triplets(np.arange(3), np.arange(3), m[:, None, None] * np.eye(3))
    sys_ = build_coarse_system(M, np.zeros(9), classification_from_labels([0, 0, 0], [False]),
                               AffineBasis(np.zeros((3, 3))))
    assert len(sys_.hessian) == 1 and np.allclose(sys_.hessian.blocks[0], 6.5 * np.eye(3))


def test_restriction_matrix_examples():
    aff = AffineBasis(np.zeros((3, 3)))
    assert np.array_equal(build_restriction_matrix(identity_classification(3), aff, 3), np.eye(9))
    U = build_restriction_matrix(classification_from_labels([0, 0], [False]), AffineBasis(np.zeros((2, 3))), 2)
    assert np.array_equal(U, np.hstack([np.eye(3), np.eye(3)]))
    U = build_restriction_matrix(classification_from_labels([0], [True]), AffineBasis([[1, 1, 1]]), 1)
    assert np.array_equal(U, np.kron(np.ones((4, 1)), np.eye(3)))
    with pytest.raises(ValueError):
        build_restriction_matrix(identity_classification(4000), AffineBasis(np.zeros((4000, 3))), 4000)


def test_prolongate_examples():
    d = np.random.default_rng(5).standard_normal(6)
    assert np.array_equal(prolongate(d, identity_classification(2), AffineBasis(np.zeros((2, 3)))).reshape(-1), d)
    X = np.random.default_rng(6).standard_normal((5, 3))
    out = prolongate([1, 2, 3], classification_from_labels([0] * 5, [False]), AffineBasis(X))
    assert np.array_equal(out, np.tile([1, 2, 3], (5, 1)))
    t = np.array([0.3, -1.0, 2.0])
    dc = np.concatenate([np.zeros(9), t])
    out = prolongate(dc, classification_from_labels([0] * 5, [True]), AffineBasis(X))
    assert np.allclose(out, t)


def test_bsr_and_matrix_market(tmp_path):
    rng = np.random.default_rng(7)
    H = random_spd_triplets(rng, 6)
    assert np.array_equal(to_bsr(H, 6).toarray(), H.to_dense(6))
    write_matrix_market(tmp_path / "h.mtx", H, 6)
    assert np.allclose(scipy.io.mmread(str(tmp_path / "h.mtx")).toarray(), H.to_dense(6))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_galerkin_matches_dense(seed, n):
    assert galerkin_mismatch(np.random.default_rng(seed), n) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_restriction_and_prolongation_are_adjoint(seed, n):
    rng = np.random.default_rng(seed)
    cls = random_classification(rng, n)
    aff = AffineBasis(rng.standard_normal((n, 3)))
    U = build_restriction_matrix(cls, aff, n)
    g = rng.standard_normal(3 * n)
    d = rng.standard_normal(U.shape[0])
    assert np.allclose(restrict_gradient(g, cls, aff), U @ g, rtol=1e-12, atol=1e-12)
    assert np.allclose(prolongate(d, cls, aff).reshape(-1), U.T @ d, rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_coarse_hessian_stays_spd(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 20))
    cls = random_classification(rng, n, affine_fraction=0.3)
    # an affine aggregate needs four affinely independent rest points to stay definite
    X = rng.standard_normal((n, 3))
    H = random_spd_triplets(rng, n)
    U = build_restriction_matrix(cls, AffineBasis(X), n)
    if np.linalg.matrix_rank(U) < U.shape[0]:
        return
    Hc = build_coarse_system(H, np.zeros(3 * n), cls, AffineBasis(X)).hessian.to_dense(cls.expanded_node_count)
    assert np.abs(Hc - Hc.T).max() <= 1e-10 * np.abs(Hc).max()
    assert oracle.min_eigenvalue(Hc) > 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40))
def test_all_3dof_restriction_conserves_force(seed, n):
    rng = np.random.default_rng(seed)
    cls = random_classification(rng, n, affine_fraction=0.0)
    g = rng.standard_normal((n, 3))
    gc = restrict_gradient(g, cls, AffineBasis(rng.standard_normal((n, 3))))
    assert np.allclose(gc.reshape(-1, 3).sum(axis=0), g.sum(axis=0), rtol=1e-12, atol=1e-12)
