import numpy as np
import pytest

from adacoarse import oracle
from adacoarse.energy import BarrierParams, IncrementalPotential, MaterialParams, Plane
from adacoarse.mesh import make_mesh
from adacoarse.scenes import box_tets


def path3():
    return make_mesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1], [1, 2]], "edge", density=1.0)


def test_union_find_examples():
    X, T = box_tets((3, 3, 3))
    mesh = make_mesh(X, T, "tet", density=1.0)
    assert np.all(oracle.union_find_components(np.ones(mesh.n_edges), mesh) == 0)
    assert np.array_equal(oracle.union_find_components(np.zeros(mesh.n_edges), mesh), np.arange(27))
    assert oracle.union_find_components([1, 0], path3()).tolist() == [0, 0, 2]


def test_same_partition():
    assert oracle.same_partition([0, 0, 1], [5, 5, 2])
    assert not oracle.same_partition([0, 0, 1], [0, 1, 1])
    assert not oracle.same_partition([0, 1, 2], [0, 0, 1])


def test_fd_gradient_examples():
    g = oracle.fd_gradient(lambda x: 0.5 * float(x @ x), np.array([1.0, 2.0]))
    assert np.allclose(g, [1, 2], atol=1e-9)
    assert np.all(oracle.fd_gradient(lambda x: 3.0, np.ones(4)) == 0)


def test_fd_gradient_richardson_consistency():
    X, T = box_tets((2, 2, 2), 0.3, origin=(0, 0.1, 0))
    mesh = make_mesh(X, T, "tet", density=1000.0)
    model = IncrementalPotential(mesh, MaterialParams(1e4, 0.3, 1000.0),
                                 BarrierParams(0.15, 5.0, (Plane((0, 1, 0), 0.0),)), 0.05)
    x = X + 0.02 * np.random.default_rng(0).standard_normal(X.shape)
    f = lambda y: model.energy(y, X)
    g = model.gradient(x, X)
    for h in (1e-5, 1e-6):
        assert np.abs(oracle.fd_gradient(f, x, h) - g).max() <= 1e-5 * np.abs(g).max()


def test_dense_solve_examples():
    b = np.arange(1.0, 6.0)
    assert np.allclose(oracle.dense_solve(np.eye(5), b), b)
    assert np.allclose(oracle.dense_solve(np.diag(np.arange(1.0, 6.0)), b), 1.0)
    rng = np.random.default_rng(1)
    A = rng.standard_normal((20, 20))
    A = A @ A.T + 20 * np.eye(20)
    x = oracle.dense_solve(A, b.repeat(4))
    assert np.linalg.norm(A @ x - b.repeat(4)) <= 1e-10 * np.linalg.norm(b.repeat(4))
    with pytest.raises(np.linalg.LinAlgError):
        oracle.dense_solve(-np.eye(3), np.ones(3))


def test_size_guards():
    with pytest.raises(ValueError):
        oracle.dense_solve(np.eye(3001), np.ones(3001))
    with pytest.raises(ValueError):
        oracle.min_eigenvalue(np.eye(3001))


def test_eigen_and_lstsq():
    assert oracle.min_eigenvalue(np.diag([3.0, -1.0, 2.0])) == pytest.approx(-1.0)
    U = np.eye(3)[:2]
    assert oracle.lstsq_residual(U, [1.0, 2.0, 0.0]) < 1e-15
    assert oracle.lstsq_residual(U, [1.0, 2.0, 0.5]) == pytest.approx(0.5)
