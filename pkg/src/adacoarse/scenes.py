"""Procedural meshes and the built-in test scenes."""
import itertools

import numpy as np

from .energy import BarrierParams, MaterialParams, Plane
from .mesh import make_mesh

# Kuhn subdivision of the unit cube into 6 tets sharing the 0-7 diagonal
_KUHN = [(0, 1, 3, 7), (0, 1, 5, 7), (0, 2, 3, 7), (0, 2, 6, 7), (0, 4, 5, 7), (0, 4, 6, 7)]


def box_tets(counts, size=1.0, origin=(0.0, 0.0, 0.0)):
    """Vertex positions and tets of a box with ``counts`` vertices per axis."""
    nx, ny, nz = counts
    size = np.broadcast_to(np.asarray(size, dtype=float), (3,))
    axes = [np.linspace(0.0, size[k], c) for k, c in enumerate(counts)]
    X = np.array(list(itertools.product(*axes))) + np.asarray(origin, dtype=float)
    vid = lambda i, j, k: (i * ny + j) * nz + k
    tets = []
    for i, j, k in itertools.product(range(nx - 1), range(ny - 1), range(nz - 1)):
        corner = [vid(i + a, j + b, k + c) for a, b, c in itertools.product((0, 1), repeat=3)]
        tets.extend([[corner[q] for q in t] for t in _KUHN])
    return X, np.array(tets, dtype=np.int64)


def grid_triangles(nx, nz, size=1.0, height=0.0):
    xs, zs = np.linspace(0, size, nx), np.linspace(0, size, nz)
    X = np.array([[x, height, z] for x in xs for z in zs])
    tris = []
    for i in range(nx - 1):
        for k in range(nz - 1):
            a, b, c, d = i * nz + k, (i + 1) * nz + k, i * nz + k + 1, (i + 1) * nz + k + 1
            tris += [[a, b, d], [a, d, c]]
    return X, np.array(tris, dtype=np.int64)


def polyline(n, length=1.0, height=0.0):
    X = np.zeros((n, 3))
    X[:, 0] = np.linspace(0.0, length, n)
    X[:, 1] = height
    return X, np.array([[i, i + 1] for i in range(n - 1)], dtype=np.int64)


def dropped_cube(counts=(7, 7, 7), size=0.2, gap=0.01, speed=-1.0, youngs=1e5,
                 density=1000.0, dhat_rel=1e-2, kappa=None):
    """Soft cube just above the ground plane y = 0, moving down at ``speed``.

    Returns (mesh, material, barrier, initial velocity).
    """
    material = MaterialParams(youngs, 0.3, density)
    X, T = box_tets(counts, size, origin=(0.0, gap, 0.0))
    mesh = make_mesh(X, T, "tet", density=density)
    dhat = dhat_rel * mesh.bbox_diagonal()
    if kappa is None:
        kappa = youngs * size ** 2 * 1e-2
    barrier = BarrierParams(dhat=dhat, kappa=kappa, planes=(Plane((0.0, 1.0, 0.0), 0.0),))
    return mesh, material, barrier, np.array([0.0, speed, 0.0])
