"""Galerkin coarse-system assembly from block triplets.

Coarse nodes are laid out 3-DoF first, then 12-DoF.  A 12-DoF node ``m``
occupies four consecutive *expanded* 3-vector slots starting at
``n3 + 4 (m - n3)``: one per component of the homogeneous rest coordinate
(x, y, z, 1).  Every coarse block is then an ordinary 3x3 block over expanded
indices, so the same keyed reduction serves both the fine and coarse systems.
"""
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse

from .triplets import Triplets

KEY_LIMIT = 1 << 32
DENSE_DOF_LIMIT = 10_000


def hash_key(i, j):
    """64-bit reduction key ``(i << 32) | j``."""
    if not (0 <= i < KEY_LIMIT and 0 <= j < KEY_LIMIT):
        raise OverflowError(f"node index pair ({i}, {j}) does not fit 32 bits")
    return (int(i) << 32) | int(j)


def hash_keys(rows, cols):
    rows = np.asarray(rows, dtype=np.uint64)
    cols = np.asarray(cols, dtype=np.uint64)
    if len(rows) and (rows.max() >= KEY_LIMIT or cols.max() >= KEY_LIMIT):
        raise OverflowError("node index does not fit 32 bits")
    return (rows << np.uint64(32)) | cols


def reduce_triplets(triplets):
    """Sort by key and sum duplicates; within a key, input order is kept."""
    if not len(triplets):
        return Triplets.empty()
    keys = hash_keys(triplets.rows, triplets.cols)
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    starts = np.flatnonzero(np.concatenate([[True], keys[1:] != keys[:-1]]))
    blocks = np.add.reduceat(triplets.blocks[order], starts, axis=0)
    return Triplets(triplets.rows[order][starts], triplets.cols[order][starts], blocks)


class AffineBasis:
    """Homogeneous rest coordinates; ``matrix(f)`` is the 12x3 kron(X_f, I3)."""

    def __init__(self, rest_positions):
        x = np.asarray(rest_positions, dtype=float).reshape(-1, 3)
        self.homogeneous = np.hstack([x, np.ones((len(x), 1))])

    def __len__(self):
        return len(self.homogeneous)

    def matrix(self, f):
        return np.kron(self.homogeneous[f][:, None], np.eye(3))


def expanded_row(m, n3, K):
    """Row slot of sub-block ``K`` (row-major in a 4x4 grid) of 12-DoF node ``m``."""
    return n3 + (m - n3) * 4 + K // 4


def expanded_col(m, n3, K):
    return n3 + (m - n3) * 4 + K % 4


def transform_triplets(fine, classification, affine):
    """Flatten every fine block into 3x3 blocks over expanded coarse indices.

    Output keeps the per-triplet block order of an exclusive-sum layout:
    triplet ``t`` writes ``block_counts[t]`` consecutive entries (1, 4 or 16).
    """
    n3 = classification.n3
    fmap = classification.fine_map
    X = affine.homogeneous
    cr, cc = fmap[fine.rows], fmap[fine.cols]
    r12, c12 = cr >= n3, cc >= n3
    counts = np.where(r12 & c12, 16, np.where(r12 | c12, 4, 1))
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    total = int(counts.sum())
    rows = np.empty(total, dtype=np.int64)
    cols = np.empty(total, dtype=np.int64)
    blocks = np.empty((total, 3, 3))

    sel = ~r12 & ~c12
    rows[offsets[sel]], cols[offsets[sel]] = cr[sel], cc[sel]
    blocks[offsets[sel]] = fine.blocks[sel]

    sel = np.flatnonzero(r12 & c12)
    Xi, Xj, B = X[fine.rows[sel]], X[fine.cols[sel]], fine.blocks[sel]
    for K in range(16):
        at = offsets[sel] + K
        rows[at] = expanded_row(cr[sel], n3, K)
        cols[at] = expanded_col(cc[sel], n3, K)
        blocks[at] = (Xi[:, K // 4] * Xj[:, K % 4])[:, None, None] * B

    # 3 x 12: B A_j^T is one block row of four blocks
    sel = np.flatnonzero(~r12 & c12)
    Xj, B = X[fine.cols[sel]], fine.blocks[sel]
    for K in range(4):
        at = offsets[sel] + K
        rows[at] = cr[sel]
        cols[at] = expanded_col(cc[sel], n3, K)
        blocks[at] = Xj[:, K, None, None] * B

    # 12 x 3: A_i B is one block column of four blocks
    sel = np.flatnonzero(r12 & ~c12)
    Xi, B = X[fine.rows[sel]], fine.blocks[sel]
    for K in range(4):
        at = offsets[sel] + K
        rows[at] = n3 + (cr[sel] - n3) * 4 + K
        cols[at] = cc[sel]
        blocks[at] = Xi[:, K, None, None] * B

    return Triplets(rows, cols, blocks)


def transform_triplet(t, classification, affine):
    """Single-triplet form of :func:`transform_triplets`; returns a list."""
    one = Triplets([t[0]], [t[1]], [t[2]])
    return list(transform_triplets(one, classification, affine))


def restrict_gradient(g_f, classification, affine):
    """Flat coarse gradient, 3-DoF entries first, then 12 scalars per affine node."""
    g = np.asarray(g_f, dtype=float).reshape(-1, 3)
    n3 = classification.n3
    cm = classification.fine_map
    out = np.zeros((classification.expanded_node_count, 3))
    plain = cm < n3
    np.add.at(out, cm[plain], g[plain])
    aff = np.flatnonzero(~plain)
    if len(aff):
        base = n3 + (cm[aff] - n3) * 4
        X = affine.homogeneous[aff]
        for a in range(4):
            np.add.at(out, base + a, X[:, a, None] * g[aff])
    return out.reshape(-1)


def prolongate(d_c, classification, affine):
    """Fine displacement U^T d_c, shape (n_fine, 3)."""
    d = np.asarray(d_c, dtype=float).reshape(-1, 3)
    n3 = classification.n3
    cm = classification.fine_map
    out = np.empty((len(cm), 3))
    plain = cm < n3
    out[plain] = d[cm[plain]]
    aff = np.flatnonzero(~plain)
    if len(aff):
        base = n3 + (cm[aff] - n3) * 4
        X = affine.homogeneous[aff]
        out[aff] = sum(X[:, a, None] * d[base + a] for a in range(4))
    return out


@dataclass
class CoarseSystem:
    gradient: np.ndarray
    hessian: Triplets
    n3: int
    n12: int

    @property
    def expanded_node_count(self):
        return self.n3 + 4 * self.n12

    @property
    def dof(self):
        return 3 * self.n3 + 12 * self.n12


def build_coarse_system(fine_triplets, g_f, classification, affine):
    """Restrict a deduplicated fine system: H_c = U H_f U^T, g_c = U g_f."""
    coarse = reduce_triplets(transform_triplets(fine_triplets, classification, affine))
    return CoarseSystem(
        gradient=restrict_gradient(g_f, classification, affine),
        hessian=coarse,
        n3=classification.n3,
        n12=classification.n12,
    )


def build_restriction_matrix(classification, affine, fine_vertex_count):
    """Explicit dense U, (3 n3 + 12 n12) x (3 n_fine); small systems only."""
    if 3 * fine_vertex_count > DENSE_DOF_LIMIT:
        raise ValueError(f"dense restriction limited to {DENSE_DOF_LIMIT} fine DoF")
    n3 = classification.n3
    U = np.zeros((3 * classification.expanded_node_count, 3 * fine_vertex_count))
    eye = np.eye(3)
    for f, m in enumerate(classification.fine_map):
        cs = slice(3 * f, 3 * f + 3)
        if m < n3:
            U[3 * m:3 * m + 3, cs] = eye
        else:
            r = 3 * (n3 + 4 * (m - n3))
            U[r:r + 12, cs] = affine.matrix(f)
    return U


def to_bsr(triplets, n_nodes):
    """Deduplicated, key-sorted triplets -> scipy BSR matrix (3x3 blocks)."""
    indptr = np.searchsorted(triplets.rows, np.arange(n_nodes + 1)).astype(np.int64)
    return scipy.sparse.bsr_matrix((triplets.blocks, triplets.cols, indptr),
                                   shape=(3 * n_nodes, 3 * n_nodes))


def write_matrix_market(path, triplets, n_nodes):
    scipy.io.mmwrite(str(path), to_bsr(reduce_triplets(triplets), n_nodes).tocoo())
