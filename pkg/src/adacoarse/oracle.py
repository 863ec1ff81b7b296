"""Brute-force references for testing.

Nothing here shares kernels with the production path: partitions come from a
plain union-find, linear algebra from dense numpy, derivatives from central
differences.
"""
import numpy as np

MAX_UNION_FIND = 1_000_000
MAX_DENSE_DOF = 3000


class UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller index becomes the root, so labels are component minima
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def union_find_components(tags, mesh):
    """Label each vertex with the minimum vertex index of its collapsible component."""
    n = mesh.n_vertices
    if n > MAX_UNION_FIND:
        raise ValueError("union-find oracle limited to 1e6 vertices")
    uf = UnionFind(n)
    for (a, b), t in zip(mesh.edges.tolist(), np.asarray(tags).tolist()):
        if t == 1:
            uf.union(a, b)
    return np.array([uf.find(v) for v in range(n)], dtype=np.int64)


def same_partition(labels_a, labels_b):
    """True if two labelings induce the same partition (up to relabeling)."""
    a, b = np.asarray(labels_a), np.asarray(labels_b)
    if a.shape != b.shape:
        return False
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


def fd_gradient(energy, x, step=1e-6):
    """Central differences of ``energy`` at every scalar entry of ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        ep = energy(x)
        flat[i] = orig - step
        em = energy(x)
        flat[i] = orig
        gflat[i] = (ep - em) / (2 * step)
    return g


def dense_solve(A, b):
    """Cholesky solve; raises ``np.linalg.LinAlgError`` on a non-SPD pivot."""
    A = np.asarray(A, dtype=float)
    if A.shape[0] > MAX_DENSE_DOF:
        raise ValueError(f"dense oracle limited to {MAX_DENSE_DOF} DoF")
    L = np.linalg.cholesky(A)
    y = np.linalg.solve(L, np.asarray(b, dtype=float))
    return np.linalg.solve(L.T, y)


def dense_galerkin(H_dense, g, U):
    return U @ H_dense @ U.T, U @ np.asarray(g).reshape(-1)


def min_eigenvalue(A):
    A = np.asarray(A, dtype=float)
    if A.shape[0] > MAX_DENSE_DOF:
        raise ValueError(f"dense oracle limited to {MAX_DENSE_DOF} DoF")
    return float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])


def lstsq_residual(U, d):
    """Distance from ``d`` to the row space of ``U`` (inf-norm of U^T w - d)."""
    w, *_ = np.linalg.lstsq(U.T, np.asarray(d).reshape(-1), rcond=None)
    return float(np.max(np.abs(U.T @ w - np.asarray(d).reshape(-1))))
