"""Adaptive aggregation of fine vertices into coarse super-nodes.

Edges are tagged collapsible (1) or protected (0) from per-element strain
increments.  Vertices are then merged across collapsible edges with a
group-local bit-hash scheme: each node of a group of at most 32 consecutive
(ordered) nodes owns one bit, direct collapsible neighbors in the same group
set their bits, and the hashes are OR-propagated to a fixpoint.  Nodes that
end with equal hashes form one coarse node.  The pass is repeated on the
coarse graph until nothing merges, so the final partition is the set of
connected components of the collapsible subgraph.
"""
import csv
from dataclasses import dataclass

import numpy as np

from .mesh import ordering_from_graph
from .parallel import chunked_map

def tag_edges(increment_norms, threshold, mesh):
    """1 = collapsible, 0 = protected (some incident element exceeds ``threshold``)."""
    norms = np.asarray(increment_norms, dtype=float)
    counts = np.array([len(l) for l in mesh.edge_to_elements], dtype=np.int64)
    edge_max = np.full(mesh.n_edges, -np.inf)
    if counts.sum():
        flat = np.concatenate(mesh.edge_to_elements)
        np.maximum.at(edge_max, np.repeat(np.arange(mesh.n_edges), counts), norms[flat])
    return (edge_max <= threshold).astype(np.uint8)


def _group_lane(ordering, offset=0):
    pos = ordering.inv_perm + offset
    return pos // ordering.group_size, pos % ordering.group_size


def init_hashes(tags, ordering, edges, offset=0):
    """Direct-neighbor encoding: own lane bit plus lanes of collapsible in-group neighbors."""
    group, lane = _group_lane(ordering, offset)
    hashes = (np.uint32(1) << lane.astype(np.uint32)).astype(np.uint32)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    keep = (np.asarray(tags) == 1) & (group[edges[:, 0]] == group[edges[:, 1]])
    a, b = edges[keep, 0], edges[keep, 1]
    np.bitwise_or.at(hashes, a, (np.uint32(1) << lane[b].astype(np.uint32)))
    np.bitwise_or.at(hashes, b, (np.uint32(1) << lane[a].astype(np.uint32)))
    return hashes


def _lowest_bit(h):
    return (h & -h).bit_length() - 1


def _propagate_group(initial, size, padding=0):
    """Fixpoint OR-propagation for one group; ``initial`` is indexed by lane.

    ``padding`` masks lanes with no node behind them; they never count as
    coarse nodes.
    """
    full = (1 << size) - 1
    final = []
    for lane in range(size):
        con = initial[lane]
        visited = 1 << lane
        while con != full:
            todo = visited ^ con
            if todo == 0:
                break
            nxt = _lowest_bit(todo)
            visited |= 1 << nxt
            con |= initial[nxt]
        final.append(con)
    elect = 0
    for lane, con in enumerate(final):
        if con & ((1 << lane) - 1) == 0:
            elect |= 1 << lane
    elect &= ~padding
    # rank of the component representative (lowest lane of the final hash)
    order = [bin(elect & ((1 << _lowest_bit(con)) - 1)).count("1") for con in final]
    return final, order, bin(elect).count("1")


def propagate_hashes(hashes, ordering, offset=0, workers=1):
    """Returns (final hashes, local coarse order, per-group coarse count).

    The first two are indexed by node; counts are indexed by group.
    """
    n = len(ordering.perm)
    gs = ordering.group_size
    n_groups = -(-(n + offset) // gs)
    # lane-indexed view: slot p + offset holds the node at ordered position p
    slots = np.left_shift(1, np.arange(n_groups * gs) % gs).astype(np.int64)
    present = np.zeros(n_groups * gs, dtype=bool)
    slots[np.arange(n) + offset] = np.asarray(hashes, dtype=np.int64)[ordering.perm]
    present[np.arange(n) + offset] = True

    def run(groups):
        out = []
        for g in range(groups.start, groups.stop):
            lo = g * gs
            # empty (padding) slots own an isolated bit and are masked from the election
            pad = sum(1 << k for k in np.flatnonzero(~present[lo:lo + gs]).tolist())
            out.append(_propagate_group(slots[lo:lo + gs].tolist(), gs, pad))
        return out

    results = [r for chunk in chunked_map(run, n_groups, workers, chunk=64) for r in chunk]
    final_slots = np.zeros(n_groups * gs, dtype=np.int64)
    order_slots = np.zeros(n_groups * gs, dtype=np.int64)
    counts = np.zeros(n_groups, dtype=np.int64)
    for g, (final, order, count) in enumerate(results):
        final_slots[g * gs:(g + 1) * gs] = final
        order_slots[g * gs:(g + 1) * gs] = order
        counts[g] = count
    pos = ordering.inv_perm + offset
    return final_slots[pos].astype(np.uint32), order_slots[pos], counts


@dataclass
class FineToCoarseMap:
    map: np.ndarray
    coarse_count: int
    aggregate_size: np.ndarray
    levels: int


def _hash_pass(n, edges, ordering, offset, workers):
    tags = np.ones(len(edges), dtype=np.uint8)
    hashes = init_hashes(tags, ordering, edges, offset)
    _, order, counts = propagate_hashes(hashes, ordering, offset, workers)
    group = (ordering.inv_perm + offset) // ordering.group_size
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return starts[group] + order, int(counts.sum())


def _merge_pass(n, edges, ordering, workers):
    """One level of aggregation; a stalled pass is retried with shifted groups."""
    for offset in (0, ordering.group_size // 2):
        level_map, count = _hash_pass(n, edges, ordering, offset, workers)
        if count < n:
            return level_map, count
    return None


def _coarse_edges(edges, level_map):
    pairs = np.sort(level_map[np.asarray(edges, dtype=np.int64).reshape(-1, 2)], axis=1)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    return np.unique(pairs, axis=0) if len(pairs) else pairs.reshape(0, 2)


def build_map(tags, ordering, mesh, workers=1):
    """Partition fine vertices into connected components of the collapsible subgraph.

    Each level hashes the current graph, then the coarse graph (an edge per
    pair of coarse nodes joined by a collapsible fine edge) is BFS-reordered
    and hashed again until no collapsible edge remains between coarse nodes.
    """
    gs = ordering.group_size
    if gs < 2:
        raise ValueError("aggregation needs group_size >= 2")
    n = mesh.n_vertices
    level_edges = mesh.edges[np.asarray(tags) == 1]
    level_order, level_n = ordering, n
    composite = np.arange(n, dtype=np.int64)
    levels = 0
    while len(level_edges):
        result = _merge_pass(level_n, level_edges, level_order, workers)
        if result is None and level_order is ordering:
            # the mesh-wide ordering may scatter collapsible neighbors; reorder
            level_order = ordering_from_graph(level_n, level_edges, gs)
            result = _merge_pass(level_n, level_edges, level_order, workers)
        if result is None:
            break
        level_map, level_n = result
        levels += 1
        composite = level_map[composite]
        level_edges = _coarse_edges(level_edges, level_map)
        level_order = ordering_from_graph(level_n, level_edges, gs)
    count = level_n
    sizes = np.bincount(composite, minlength=count)
    return FineToCoarseMap(map=composite, coarse_count=count, aggregate_size=sizes, levels=levels)


@dataclass
class DofClassification:
    """Coarse nodes after the 3-DoF-first reordering.

    ``reorder[k]`` is the pre-reordering index of coarse node ``k``;
    ``fine_map`` sends each fine vertex to its reordered coarse node.
    """

    dof: np.ndarray
    n3: int
    n12: int
    reorder: np.ndarray
    fine_map: np.ndarray
    aggregate_size: np.ndarray
    affine_threshold: int
    aggregation: FineToCoarseMap = None

    @property
    def coarse_dof(self):
        return 3 * self.n3 + 12 * self.n12

    @property
    def expanded_node_count(self):
        return self.n3 + 4 * self.n12

    @property
    def coarse_count(self):
        return self.n3 + self.n12


def classify_dof(fmap, affine_threshold=32):
    size = fmap.aggregate_size
    c = fmap.coarse_count
    affine = size > affine_threshold
    keys = np.where(affine, np.arange(c) + c, np.arange(c))
    indices = np.argsort(keys, kind="stable")
    rank = np.empty(c, dtype=np.int64)
    rank[indices] = np.arange(c)
    n12 = int(affine.sum())
    return DofClassification(
        dof=np.where(affine[indices], 12, 3),
        n3=c - n12,
        n12=n12,
        reorder=indices,
        fine_map=rank[fmap.map],
        aggregate_size=size[indices],
        affine_threshold=affine_threshold,
        aggregation=fmap,
    )


def identity_classification(n):
    fmap = FineToCoarseMap(np.arange(n), n, np.ones(n, dtype=np.int64), 0)
    return classify_dof(fmap, affine_threshold=np.iinfo(np.int64).max)


def all_3dof(fmap):
    """Classification that never enriches; used as a fallback for degenerate aggregates."""
    return classify_dof(fmap, affine_threshold=np.iinfo(np.int64).max)


def active_ratio(classification, fine_vertex_count):
    return classification.coarse_dof / (3 * fine_vertex_count)


def write_map_csv(path, classification):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex_id", "coarse_id", "dof"])
        for v, c in enumerate(classification.fine_map):
            w.writerow([v, int(c), int(classification.dof[c])])
