"""Simulation geometry: loading, static adjacency and BFS node ordering.

Meshes hold a single element kind (``edge``, ``triangle`` or ``tet``).  The
fine connectivity never changes during a simulation, so all adjacency is built
once at load time.
"""
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MeshError

ELEMENT_KINDS = {"edge": 2, "triangle": 3, "tet": 4}

# local vertex pairs forming the edges of each element kind
_LOCAL_EDGES = {
    "edge": [(0, 1)],
    "triangle": [(0, 1), (1, 2), (0, 2)],
    "tet": [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
}

# outward-ish faces of a tet, used only for surface extraction
_TET_FACES = [(0, 2, 1), (0, 1, 3), (0, 3, 2), (1, 2, 3)]

MAX_GROUP_SIZE = 32


@dataclass
class Mesh:
    rest_positions: np.ndarray
    kind: str
    elements: np.ndarray
    vertex_mass: np.ndarray
    measures: np.ndarray
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    edge_to_elements: list = field(default_factory=list)
    vertex_to_edges: list = field(default_factory=list)
    surface: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    @property
    def n_vertices(self):
        return len(self.rest_positions)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_edges(self):
        return len(self.edges)

    def bbox_diagonal(self, x=None):
        x = self.rest_positions if x is None else x
        return float(np.linalg.norm(x.max(axis=0) - x.min(axis=0)))


def element_measures(positions, elements, kind):
    """Rest length, area or volume of every element (unsigned)."""
    p = positions[elements]
    if kind == "edge":
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    if kind == "triangle":
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    d = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=-1)
    return np.abs(np.linalg.det(d)) / 6.0


def lumped_masses(n_vertices, elements, measures, density):
    mass = np.zeros(n_vertices)
    if len(elements):
        share = density * measures / elements.shape[1]
        np.add.at(mass, elements, share[:, None])
    return mass


def make_mesh(positions, elements, kind, density=None, vertex_mass=None):
    """Validate raw arrays and return a Mesh with adjacency built.

    Either ``density`` (lumped over elements) or an explicit ``vertex_mass`` is
    required; the latter allows element-free point sets in tests.
    """
    if kind not in ELEMENT_KINDS:
        raise MeshError(f"unsupported element kind {kind!r}")
    x = np.asarray(positions, dtype=float).reshape(-1, 3)
    elems = np.asarray(elements, dtype=np.int64).reshape(-1, ELEMENT_KINDS[kind])
    n = len(x)
    if not np.all(np.isfinite(x)):
        raise MeshError("non-finite vertex coordinate")
    for e, row in enumerate(elems):
        if row.min() < 0 or row.max() >= n:
            raise MeshError(f"vertex index out of range [0, {n})", element=e)
        if len(set(row.tolist())) != len(row):
            raise MeshError("repeated vertex index", element=e)

    measures = element_measures(x, elems, kind)
    if len(elems):
        scale = max(np.max(np.linalg.norm(x[elems[:, 1]] - x[elems[:, 0]], axis=1)), 1e-300)
        tol = 1e-12 * scale ** (ELEMENT_KINDS[kind] - 1)
        bad = np.flatnonzero(measures <= tol)
        if len(bad):
            raise MeshError("degenerate element (non-positive measure)", element=int(bad[0]))

    if vertex_mass is None:
        if density is None:
            raise MeshError("density or vertex_mass required")
        mass = lumped_masses(n, elems, measures, density)
    else:
        mass = np.asarray(vertex_mass, dtype=float).reshape(n)
    if np.any(mass <= 0):
        v = int(np.flatnonzero(mass <= 0)[0])
        raise MeshError(f"vertex {v} has non-positive mass (not referenced by any element?)")

    mesh = Mesh(rest_positions=x, kind=kind, elements=elems, vertex_mass=mass, measures=measures)
    return build_adjacency(mesh)


def build_adjacency(mesh):
    """Populate edges (sorted, unique), edge->elements and vertex->edges."""
    local = _LOCAL_EDGES[mesh.kind]
    ne = mesh.n_elements
    if ne:
        pairs = np.concatenate([mesh.elements[:, [a, b]] for a, b in local])
        owners = np.tile(np.arange(ne), len(local))
    else:
        pairs = np.zeros((0, 2), dtype=np.int64)
        owners = np.zeros(0, dtype=np.int64)
    pairs = np.sort(pairs, axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)

    edge_to_elements = [[] for _ in range(len(edges))]
    # stable order keeps element indices ascending per edge
    for k in np.lexsort((owners, inverse)):
        lst = edge_to_elements[inverse[k]]
        if not lst or lst[-1] != owners[k]:
            lst.append(int(owners[k]))
    vertex_to_edges = [[] for _ in range(mesh.n_vertices)]
    for i, (a, b) in enumerate(edges):
        vertex_to_edges[a].append(i)
        vertex_to_edges[b].append(i)

    mesh.edges = edges.astype(np.int64).reshape(-1, 2)
    mesh.edge_to_elements = [np.array(l, dtype=np.int64) for l in edge_to_elements]
    mesh.vertex_to_edges = [np.array(l, dtype=np.int64) for l in vertex_to_edges]
    mesh.surface = _surface_triangles(mesh)
    return mesh


def _surface_triangles(mesh):
    if mesh.kind == "triangle":
        return mesh.elements.copy()
    if mesh.kind != "tet" or mesh.n_elements == 0:
        return np.zeros((0, 3), dtype=np.int64)
    faces = np.concatenate([mesh.elements[:, list(f)] for f in _TET_FACES])
    # orient each face away from its tet's fourth vertex
    opposite = np.concatenate([mesh.elements[:, [i for i in range(4) if i not in f][0]]
                               for f in _TET_FACES])
    x = mesh.rest_positions
    n = np.cross(x[faces[:, 1]] - x[faces[:, 0]], x[faces[:, 2]] - x[faces[:, 0]])
    inward = np.einsum("ij,ij->i", n, x[opposite] - x[faces[:, 0]]) > 0
    faces[inward] = faces[inward][:, [0, 2, 1]]
    key = np.sort(faces, axis=1)
    _, idx, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    return faces[np.sort(idx[counts == 1])]


def _parse_tet_file(text):
    verts, tets = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(s) for s in parts[1:4]])
                if len(parts) < 4:
                    raise ValueError
            elif parts[0] == "t":
                tets.append([int(s) for s in parts[1:5]])
                if len(parts) < 5:
                    raise ValueError
            else:
                raise ValueError
        except ValueError:
            raise MeshError(f"line {lineno}: cannot parse {line.strip()!r}") from None
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(tets, dtype=np.int64).reshape(-1, 4), "tet"


def _parse_obj(text):
    verts, faces, lines = [], [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        try:
            if tag == "v":
                verts.append([float(s) for s in parts[1:4]])
            elif tag == "f":
                idx = [int(s.split("/")[0]) - 1 for s in parts[1:]]
                if len(idx) != 3:
                    raise MeshError(f"line {lineno}: only triangular faces are supported")
                faces.append(idx)
            elif tag == "l":
                idx = [int(s) - 1 for s in parts[1:]]
                if len(idx) < 2:
                    raise ValueError
                lines.extend(zip(idx[:-1], idx[1:]))
            # other OBJ records (vn, vt, o, g, s, usemtl) are ignored
        except ValueError:
            raise MeshError(f"line {lineno}: cannot parse {line.strip()!r}") from None
    if faces and lines:
        raise MeshError("mixed element kinds (faces and lines) are not supported")
    verts = np.array(verts, dtype=float).reshape(-1, 3)
    if faces:
        return verts, np.array(faces, dtype=np.int64), "triangle"
    return verts, np.array(lines, dtype=np.int64).reshape(-1, 2), "edge"


def load_mesh(path, material):
    """Read a ``.tet`` (``v``/``t`` records, 0-based) or ``.obj`` file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MeshError(f"cannot read {path}: {exc}") from exc
    if path.suffix.lower() == ".obj":
        verts, elems, kind = _parse_obj(text)
    else:
        verts, elems, kind = _parse_tet_file(text)
    if len(elems) == 0:
        raise MeshError(f"{path}: no elements")
    return make_mesh(verts, elems, kind, density=material.density)


@dataclass(frozen=True)
class NodeOrdering:
    """``perm[p]`` is the vertex at ordered position ``p``; ``inv_perm`` inverts it."""

    perm: np.ndarray
    inv_perm: np.ndarray
    group_size: int
    group_count: int

    def group_of(self, vertex):
        return self.inv_perm[vertex] // self.group_size

    def lane_of(self, vertex):
        return self.inv_perm[vertex] % self.group_size


def adjacency_lists(n, edges):
    nbrs = [[] for _ in range(n)]
    for a, b in np.asarray(edges, dtype=np.int64).reshape(-1, 2).tolist():
        nbrs[a].append(b)
        nbrs[b].append(a)
    return [sorted(set(l)) for l in nbrs]


def bfs_order(n, edges):
    """Breadth-first order over every component, lowest-index roots first."""
    nbrs = adjacency_lists(n, edges)
    seen = np.zeros(n, dtype=bool)
    order = []
    for root in range(n):
        if seen[root]:
            continue
        seen[root] = True
        queue = deque([root])
        while queue:
            v = queue.popleft()
            order.append(v)
            for w in nbrs[v]:
                if not seen[w]:
                    seen[w] = True
                    queue.append(w)
    return np.array(order, dtype=np.int64)


def ordering_from_graph(n, edges, group_size):
    if not 1 <= group_size <= MAX_GROUP_SIZE:
        raise ValueError(f"group_size must be in [1, {MAX_GROUP_SIZE}], got {group_size}")
    perm = bfs_order(n, edges)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(n)
    return NodeOrdering(perm=perm, inv_perm=inv, group_size=group_size,
                        group_count=-(-n // group_size))


def order_and_group(mesh, group_size=MAX_GROUP_SIZE):
    return ordering_from_graph(mesh.n_vertices, mesh.edges, group_size)
