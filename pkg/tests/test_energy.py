import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adacoarse import oracle
from adacoarse.assemble import reduce_triplets
from adacoarse.energy import (BarrierParams, IncrementalPotential, MaterialParams, Plane, barrier,
                              deformation_gradient, green_strain, incremental_potential, ip_gradient,
                              ip_hessian, strain_increment_norms)
from adacoarse.errors import InfeasibleStateError
from adacoarse.mesh import make_mesh
from adacoarse.scenes import box_tets, grid_triangles, polyline

MAT = MaterialParams(1e4, 0.3, 1000.0)
GROUND = (Plane((0.0, 1.0, 0.0), 0.0),)


def tet_mesh():
    X = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    return make_mesh(X, [[0, 1, 2, 3]], "tet", density=1.0)


def point(mass=2.0):
    return make_mesh([[0.0, 1.0, 0.0]], np.zeros((0, 2)), "edge", vertex_mass=[mass])


def scene(kind):
    if kind == "tet":
        X, T = box_tets((2, 2, 3), 0.4, origin=(0, 0.1, 0))
    elif kind == "triangle":
        X, T = grid_triangles(3, 4, 0.5, height=0.1)
    else:
        X, T = polyline(5, 0.5, height=0.1)
    return make_mesh(X, T, kind, density=1000.0)


def test_deformation_gradient_examples():
    mesh = tet_mesh()
    assert np.allclose(deformation_gradient(0, mesh.rest_positions, mesh), np.eye(3))
    assert np.allclose(deformation_gradient(0, 2 * mesh.rest_positions, mesh), 2 * np.eye(3))
    edge = make_mesh([[0, 0, 0], [1, 0, 0]], [[0, 1]], "edge", density=1.0)
    assert np.isclose(deformation_gradient(0, [[0, 0, 0], [1.5, 0, 0]], edge), 1.5)


def test_triangle_gradient_is_isometry_at_rest():
    X, T = grid_triangles(2, 2)
    mesh = make_mesh(X, T, "triangle", density=1.0)
    F = deformation_gradient(0, X, mesh)
    assert F.shape == (3, 2) and np.allclose(F.T @ F, np.eye(2))


def test_green_strain_examples():
    assert np.allclose(green_strain(np.eye(3)), 0)
    c, s = np.cos(0.7), np.sin(0.7)
    assert np.allclose(green_strain(np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])), 0, atol=1e-15)
    G = green_strain(2 * np.eye(3))
    assert np.allclose(G, 1.5 * np.eye(3)) and np.isclose(np.linalg.norm(G), 1.5 * np.sqrt(3))


def test_strain_increment_examples():
    G = np.random.default_rng(0).standard_normal((4, 3, 3))
    assert np.all(strain_increment_norms(G, G) == 0)
    assert np.allclose(strain_increment_norms(np.zeros(1), np.array([green_strain(1.5)])), 0.625)
    assert np.isclose(strain_increment_norms(np.zeros((1, 3, 3)), 1e-4 * np.eye(3)[None])[0], np.sqrt(3) * 1e-4)


def test_rest_state_energy_is_zero():
    mesh = scene("tet")
    x = mesh.rest_positions
    assert incremental_potential(x, x, mesh, MAT, None, 0.01) == 0.0
    assert np.all(ip_gradient(x, x, mesh, MAT, None, 0.01) == 0)


def test_barrier_support():
    mesh = point()
    bp = BarrierParams(0.5, 10.0, GROUND)
    model = IncrementalPotential(mesh, MAT, bp, 0.01)
    x = np.array([[0.0, 0.5, 0.0]])
    assert model.barrier_energy(x) == 0.0
    assert len(model.hessian(x, x)) == 1
    assert model.barrier_energy(np.array([[0.0, 0.2, 0.0]])) > 0


def test_single_vertex_inertia():
    mesh = point(mass=2.0)
    xhat = mesh.rest_positions
    x = xhat + [1.0, 0.0, 0.0]
    assert incremental_potential(x, xhat, mesh, MAT, None, 0.01) == pytest.approx(1.0)
    assert np.allclose(ip_gradient(x, xhat, mesh, MAT, None, 0.01), [[2, 0, 0]])
    H = ip_hessian(x, xhat, mesh, MAT, None, 0.01)
    assert len(H) == 1 and (H.rows[0], H.cols[0]) == (0, 0) and np.allclose(H.blocks[0], 2 * np.eye(3))


def test_infeasible_raises():
    mesh = point()
    model = IncrementalPotential(mesh, MAT, BarrierParams(0.1, 1.0, GROUND), 0.01)
    with pytest.raises(InfeasibleStateError):
        model.energy(np.array([[0.0, -0.1, 0.0]]), mesh.rest_positions)


def test_barrier_derivatives_match_fd():
    d = np.linspace(0.01, 0.99, 50)
    b, db, d2b = barrier(d, 1.0, 3.0)
    h = 1e-6
    assert np.allclose(db, (barrier(d + h, 1.0, 3.0)[0] - barrier(d - h, 1.0, 3.0)[0]) / (2 * h), rtol=1e-6)
    assert np.allclose(d2b, (barrier(d + h, 1.0, 3.0)[1] - barrier(d - h, 1.0, 3.0)[1]) / (2 * h), rtol=1e-5)
    assert np.all(barrier(np.array([1.0, 2.0]), 1.0, 3.0)[0] == 0)


def test_rest_hessian_symmetric_psd():
    mesh = scene("tet")
    model = IncrementalPotential(mesh, MAT, None, 0.01)
    H = reduce_triplets(model.hessian(mesh.rest_positions)).to_dense(mesh.n_vertices)
    assert np.abs(H - H.T).max() <= 1e-10
    assert oracle.min_eigenvalue(H) > 0


@pytest.mark.parametrize("kind", ["edge", "triangle", "tet"])
def test_exact_hessian_matches_fd_of_gradient(kind):
    mesh = scene(kind)
    rng = np.random.default_rng(1)
    model = IncrementalPotential(mesh, MAT, BarrierParams(0.15, 5.0, GROUND), 0.05)
    x = mesh.rest_positions + 0.02 * rng.standard_normal(mesh.rest_positions.shape)
    xhat = mesh.rest_positions
    H = reduce_triplets(model.hessian(x, xhat, project=False)).to_dense(mesh.n_vertices)
    n = x.size
    fd = np.zeros((n, n))
    h = 1e-6
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        fd[:, i] = (model.gradient(x + e.reshape(x.shape), xhat) - model.gradient(x - e.reshape(x.shape), xhat)).reshape(-1) / (2 * h)
    assert np.abs(H - fd).max() <= 1e-5 * np.abs(fd).max()


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["edge", "triangle", "tet"]), st.integers(0, 2**31), st.booleans())
def test_gradient_matches_fd(kind, seed, contact):
    mesh = scene(kind)
    rng = np.random.default_rng(seed)
    bp = BarrierParams(0.15 if contact else 0.01, 5.0, GROUND)
    model = IncrementalPotential(mesh, MAT, bp, 0.05)
    x = mesh.rest_positions + 0.03 * rng.standard_normal(mesh.rest_positions.shape)
    x[:, 1] = np.maximum(x[:, 1], 0.02)
    xhat = mesh.rest_positions + 0.03 * rng.standard_normal(mesh.rest_positions.shape)
    g = model.gradient(x, xhat)
    fd = oracle.fd_gradient(lambda y: model.energy(y, xhat), x, 1e-6)
    assert np.abs(g - fd).max() <= 1e-5 * np.abs(fd).max()


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["edge", "triangle", "tet"]), st.integers(0, 2**31))
def test_elastic_energy_rotation_invariant(kind, seed):
    mesh = scene(kind)
    rng = np.random.default_rng(seed)
    model = IncrementalPotential(mesh, MAT, None, 0.01)
    x = mesh.rest_positions + 0.05 * rng.standard_normal(mesh.rest_positions.shape)
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    Q *= np.sign(np.linalg.det(Q))
    e0, e1 = model.elastic_energy(x), model.elastic_energy(x @ Q.T + rng.standard_normal(3))
    assert e1 == pytest.approx(e0, rel=1e-9, abs=1e-15)


def test_workers_do_not_change_results():
    X, T = box_tets((6, 6, 6), 0.3, origin=(0, 0.05, 0))
    mesh = make_mesh(X, T, "tet", density=1000.0)
    x = X + 0.01 * np.random.default_rng(2).standard_normal(X.shape)
    a = IncrementalPotential(mesh, MAT, None, 0.01, workers=1)
    b = IncrementalPotential(mesh, MAT, None, 0.01, workers=4)
    assert a.energy(x, X) == b.energy(x, X)
    assert np.array_equal(a.gradient(x, X), b.gradient(x, X))
    assert np.array_equal(a.hessian(x, X).blocks, b.hessian(x, X).blocks)
