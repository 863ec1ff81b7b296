"""Oracle-backed property checks on small built-in meshes.

Production routines are looked up through their modules at call time so a
test harness can patch them (mutation checks).
"""
import time
from dataclasses import dataclass

import numpy as np

from . import assemble, coarsen, oracle, solve
from .energy import BarrierParams, IncrementalPotential, MaterialParams, Plane
from .mesh import make_mesh, order_and_group
from .scenes import box_tets, grid_triangles, polyline
from .triplets import Triplets

TIME_BUDGET = 60.0


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


# ---- random instances ------------------------------------------------------

def random_graph_mesh(rng, n_max=200):
    """Random small mesh: a tet box, a triangle grid or a random edge graph."""
    kind = rng.integers(3)
    if kind == 0:
        counts = rng.integers(2, 6, size=3)
        while np.prod(counts) > n_max:
            counts[np.argmax(counts)] -= 1
        X, T = box_tets(counts)
        return make_mesh(X + 1e-3 * rng.standard_normal(X.shape), T, "tet", density=1.0)
    if kind == 1:
        nx, nz = rng.integers(2, 14, size=2)
        while nx * nz > n_max:
            nx -= 1
        X, T = grid_triangles(nx, nz)
        return make_mesh(X, T, "triangle", density=1.0)
    n = int(rng.integers(2, n_max + 1))
    E = rng.integers(0, n, size=(int(rng.integers(1, 2 * n + 1)), 2))
    E = E[E[:, 0] != E[:, 1]]
    if not len(E):
        E = np.array([[0, 1]])
    X = rng.standard_normal((n, 3))
    return make_mesh(X, E, "edge", vertex_mass=np.ones(n))


def random_tags(rng, n_edges):
    return (rng.random(n_edges) < rng.random()).astype(np.uint8)


def classification_from_labels(labels, affine):
    """Classification for given coarse labels with an explicit per-node 12-DoF mask."""
    labels = np.asarray(labels, dtype=np.int64)
    affine = np.asarray(affine, dtype=bool)
    c = len(affine)
    sizes = np.bincount(labels, minlength=c)
    keys = np.where(affine, np.arange(c) + c, np.arange(c))
    order = np.argsort(keys, kind="stable")
    rank = np.empty(c, dtype=np.int64)
    rank[order] = np.arange(c)
    n12 = int(affine.sum())
    fmap = coarsen.FineToCoarseMap(labels, c, sizes, 1)
    return coarsen.DofClassification(
        dof=np.where(affine[order], 12, 3), n3=c - n12, n12=n12, reorder=order,
        fine_map=rank[labels], aggregate_size=sizes[order], affine_threshold=-1, aggregation=fmap)


def random_classification(rng, n, affine_fraction=0.5):
    labels = rng.integers(0, int(rng.integers(1, n + 1)), size=n)
    _, labels = np.unique(labels, return_inverse=True)
    labels = labels.reshape(-1)
    c = int(labels.max()) + 1
    return classification_from_labels(labels, rng.random(c) < affine_fraction)


def random_spd_triplets(rng, n, density=0.3):
    """Random symmetric, diagonally dominant block system as reduced triplets."""
    rows, cols, blocks = [], [], []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < density:
                B = rng.standard_normal((3, 3))
                rows += [i, j]
                cols += [j, i]
                blocks += [B, B.T]
    t = Triplets(rows, cols, blocks) if rows else Triplets.empty()
    dense = t.to_dense(n) if len(t) else np.zeros((3 * n, 3 * n))
    shift = np.abs(dense).sum(axis=1).reshape(n, 3).max(axis=1) + 1.0
    diag = []
    for i in range(n):
        A = rng.standard_normal((3, 3))
        diag.append(A @ A.T + shift[i] * np.eye(3))
    t = Triplets.concat([t, Triplets(np.arange(n), np.arange(n), diag)])
    return assemble.reduce_triplets(t)


# ---- checks ----------------------------------------------------------------

def check_aggregation(rng, trials=200):
    for k in range(trials):
        mesh = random_graph_mesh(rng)
        tags = random_tags(rng, mesh.n_edges)
        gs = int(rng.integers(2, 33))
        fmap = coarsen.build_map(tags, order_and_group(mesh, gs), mesh)
        ref = oracle.union_find_components(tags, mesh)
        if not oracle.same_partition(fmap.map, ref):
            return CheckResult("aggregation == union-find", False, f"trial {k} differs")
    return CheckResult("aggregation == union-find", True, f"{trials} instances")


def galerkin_mismatch(rng, n):
    X = rng.standard_normal((n, 3))
    cls = random_classification(rng, n)
    aff = assemble.AffineBasis(X)
    H = random_spd_triplets(rng, n)
    g = rng.standard_normal(3 * n)
    system = assemble.build_coarse_system(H, g, cls, aff)
    U = assemble.build_restriction_matrix(cls, aff, n)
    Hc_ref, gc_ref = oracle.dense_galerkin(H.to_dense(n), g, U)
    Hc = system.hessian.to_dense(cls.expanded_node_count)
    err_h = np.abs(Hc - Hc_ref).max() / max(np.abs(Hc_ref).max(), 1e-300)
    err_g = np.abs(system.gradient - gc_ref).max() / max(np.abs(gc_ref).max(), 1e-300)
    return max(err_h, err_g)


def check_galerkin(rng, trials=50):
    worst = 0.0
    for _ in range(trials):
        worst = max(worst, galerkin_mismatch(rng, int(rng.integers(1, 31))))
    return CheckResult("Galerkin U H U^T, U g", worst <= 1e-10, f"max rel err {worst:.2e}")


def _fd_case(rng, kind, barrier_active):
    if kind == "tet":
        X, T = box_tets((2, 2, 2), 0.5, origin=(0.0, 0.2, 0.0))
    elif kind == "triangle":
        X, T = grid_triangles(3, 3, 0.5, height=0.2)
    else:
        X, T = polyline(4, 0.5, height=0.2)
    mesh = make_mesh(X, T, kind, density=1000.0)
    mat = MaterialParams(1e4, 0.3, 1000.0)
    dhat = 0.3 if barrier_active else 0.01
    bp = BarrierParams(dhat, 50.0, (Plane((0.0, 1.0, 0.0), 0.0),))
    model = IncrementalPotential(mesh, mat, bp, dt=0.05)
    x = X + 0.03 * rng.standard_normal(X.shape)
    xhat = X + 0.03 * rng.standard_normal(X.shape)
    return model, x, xhat


def gradient_error(model, x, xhat, step=1e-6):
    g = model.gradient(x, xhat)
    fd = oracle.fd_gradient(lambda y: model.energy(y, xhat), x, step)
    return np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-300)


def check_gradients(rng, trials=5):
    worst = 0.0
    for kind in ("edge", "triangle", "tet"):
        for active in (False, True):
            for _ in range(trials):
                worst = max(worst, gradient_error(*_fd_case(rng, kind, active)))
    return CheckResult("gradient vs finite differences", worst <= 1e-5, f"max rel err {worst:.2e}")


def check_hessian_spd(rng):
    worst_sym, worst_eig = 0.0, np.inf
    for kind in ("edge", "triangle", "tet"):
        model, x, xhat = _fd_case(rng, kind, True)
        H = assemble.reduce_triplets(model.hessian(x, xhat)).to_dense(model.mesh.n_vertices)
        scale = np.abs(H).max()
        worst_sym = max(worst_sym, np.abs(H - H.T).max() / scale)
        worst_eig = min(worst_eig, oracle.min_eigenvalue(H) / np.linalg.norm(H, 2))
    ok = worst_sym <= 1e-10 and worst_eig >= -1e-8
    return CheckResult("Hessian symmetric PSD", ok, f"asym {worst_sym:.1e}, min eig/|H| {worst_eig:.1e}")


def check_adjoint(rng, trials=20):
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 31))
        cls = random_classification(rng, n)
        aff = assemble.AffineBasis(rng.standard_normal((n, 3)))
        u = rng.standard_normal(3 * cls.expanded_node_count)
        v = rng.standard_normal(3 * n)
        lhs = np.dot(assemble.prolongate(u, cls, aff).reshape(-1), v)
        rhs = np.dot(u, assemble.restrict_gradient(v, cls, aff))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1.0))
    return CheckResult("restriction/prolongation adjoint", worst <= 1e-12, f"max err {worst:.1e}")


def check_flattening(rng, trials=500):
    """Single fine blocks against the dense U H U^T placement, all 3/12 mixes."""
    for k in range(trials):
        n3, n12 = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        row12, col12 = rng.random(2) < 0.5
        target = [n3 + rng.integers(n12) if f else rng.integers(n3) for f in (row12, col12)]
        affine = np.arange(n3 + n12) >= n3
        labels = np.array(target + list(range(n3 + n12)))
        cls = classification_from_labels(labels, affine)
        aff = assemble.AffineBasis(rng.standard_normal((len(labels), 3)))
        B = rng.standard_normal((3, 3))
        out = assemble.transform_triplets(Triplets([0], [1], [B]), cls, aff)
        expected = {(False, False): 1, (True, True): 16}.get((bool(row12), bool(col12)), 4)
        H = np.zeros((3 * len(labels), 3 * len(labels)))
        H[0:3, 3:6] = B
        U = assemble.build_restriction_matrix(cls, aff, len(labels))
        ref = U @ H @ U.T
        got = out.to_dense(cls.expanded_node_count)
        if len(out) != expected or np.abs(got - ref).max() > 1e-12 * max(np.abs(ref).max(), 1.0):
            return CheckResult("mixed-block flattening", False, f"case {k}")
    return CheckResult("mixed-block flattening", True, f"{trials} cases")


def check_worked_examples():
    ordering = _linear_ordering(4, 4)
    h = np.array([0b0111, 0b1111, 0b0111, 0b1010], dtype=np.uint32)
    final, _, counts = coarsen.propagate_hashes(h, ordering)
    ok = list(final) == [0b1111] * 4 and list(counts) == [1]
    ordering = _linear_ordering(3, 3)
    final, order, counts = coarsen.propagate_hashes(np.array([1, 2, 4], dtype=np.uint32), ordering)
    ok &= list(final) == [1, 2, 4] and list(order) == [0, 1, 2] and list(counts) == [3]
    cls = coarsen.DofClassification(np.array([3] * 14675 + [12] * 113), 14675, 113, None, None, None, 32)
    ok &= cls.coarse_dof == 45381 and round(coarsen.active_ratio(cls, 218568 // 3), 2) == 0.21
    return CheckResult("worked hashing/ratio examples", bool(ok))


def _linear_ordering(n, gs):
    from .mesh import NodeOrdering
    perm = np.arange(n)
    return NodeOrdering(perm, perm.copy(), gs, -(-n // gs))


def check_rigid(rng):
    X, T = box_tets((3, 3, 3), 0.3, origin=(0.5, 0.2, -0.1))
    mesh = make_mesh(X, T, "tet", density=1.0)
    n = mesh.n_vertices
    aff = assemble.AffineBasis(X)
    one = coarsen.FineToCoarseMap(np.zeros(n, dtype=np.int64), 1, np.array([n]), 1)
    cls12 = coarsen.classify_dof(one, affine_threshold=0)
    cls3 = coarsen.classify_dof(one, affine_threshold=n)
    axis = rng.standard_normal(3)
    R = _rotation(axis, np.deg2rad(10.0))
    d = X @ (R - np.eye(3)).T + rng.standard_normal(3)
    r12 = oracle.lstsq_residual(assemble.build_restriction_matrix(cls12, aff, n), d)
    r3 = oracle.lstsq_residual(assemble.build_restriction_matrix(cls3, aff, n), d)
    return CheckResult("rigid rotation representability", r12 <= 1e-10 and r3 > 1e-3,
                       f"12-DoF {r12:.1e}, 3-DoF {r3:.1e}")


def _rotation(axis, angle):
    k = np.asarray(axis, dtype=float) / np.linalg.norm(axis)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def check_pcg(rng, trials=10):
    worst = 0.0
    cfg = solve.PcgConfig(rel_tol=1e-10, max_iters=500)
    for _ in range(trials):
        n = 10
        H = random_spd_triplets(rng, n)
        b = rng.standard_normal(3 * n)
        prec = solve.block_jacobi_preconditioner(H, n)
        x, _ = solve.pcg(H, b, prec, cfg)
        ref = oracle.dense_solve(H.to_dense(n), b)
        worst = max(worst, np.abs(x - ref).max() / np.abs(ref).max())
    return CheckResult("PCG vs dense Cholesky", worst <= 1e-8, f"max rel err {worst:.1e}")


CHECKS = [check_aggregation, check_galerkin, check_gradients, check_hessian_spd, check_adjoint,
          check_flattening, check_worked_examples, check_rigid, check_pcg]


def run_checks(seed=0, out=print):
    """Run every check; returns (all passed, results)."""
    rng = np.random.default_rng(seed)
    results = []
    t0 = time.perf_counter()
    for check in CHECKS:
        try:
            res = check(rng) if check is not check_worked_examples else check()
        except Exception as exc:  # a crash is a failed property
            res = CheckResult(check.__name__, False, f"{type(exc).__name__}: {exc}")
        results.append(res)
        out(f"[{'PASS' if res.passed else 'FAIL'}] {res.name}  {res.detail}")
    elapsed = time.perf_counter() - t0
    if elapsed > TIME_BUDGET:
        out(f"warning: verification took {elapsed:.1f} s (budget {TIME_BUDGET:.0f} s)")
    return all(r.passed for r in results), results
