"""Block-coordinate (BCOO) storage of 3x3 blocks."""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class BlockTriplet(NamedTuple):
    row: int
    col: int
    block: np.ndarray


@dataclass
class Triplets:
    """Structure-of-arrays triplet list: ``rows[k], cols[k], blocks[k]``."""

    rows: np.ndarray
    cols: np.ndarray
    blocks: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64).reshape(-1)
        self.cols = np.asarray(self.cols, dtype=np.int64).reshape(-1)
        self.blocks = np.asarray(self.blocks, dtype=float).reshape(-1, 3, 3)
        if not len(self.rows) == len(self.cols) == len(self.blocks):
            raise ValueError("rows, cols and blocks must have equal length")

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        for r, c, b in zip(self.rows, self.cols, self.blocks):
            yield BlockTriplet(int(r), int(c), b)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, 3, 3)))

    @classmethod
    def from_list(cls, items):
        items = list(items)
        if not items:
            return cls.empty()
        return cls([t[0] for t in items], [t[1] for t in items], [t[2] for t in items])

    @classmethod
    def concat(cls, parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(np.concatenate([p.rows for p in parts]),
                   np.concatenate([p.cols for p in parts]),
                   np.concatenate([p.blocks for p in parts]))

    def n_nodes(self):
        if not len(self):
            return 0
        return int(max(self.rows.max(), self.cols.max())) + 1

    def to_dense(self, n_nodes=None):
        """Dense accumulation; used by tests and small oracles only."""
        n = self.n_nodes() if n_nodes is None else n_nodes
        out = np.zeros((n, 3, n, 3))
        for r, c, b in zip(self.rows, self.cols, self.blocks):
            out[r, :, c, :] += b
        return out.reshape(3 * n, 3 * n)
