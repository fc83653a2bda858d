"""Maximum inner product search reduced to L2 search by norm augmentation.

Each row ``w`` becomes ``(w, sqrt(M^2 - |w|^2))`` with ``M`` the largest row
norm, and each query ``h`` becomes ``(h, 0)``. Then
``|x - q|^2 = M^2 + |h|^2 - 2 <w, h>``, so ascending L2 distance is exactly
descending inner product.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import BuildError, InputError
from .hnsw import HnswIndex, HnswParams


def augment_rows(rows: np.ndarray):
    """Return ``(augmented points, M)``."""
    rows = np.asarray(rows, dtype=np.float64)
    sq = np.einsum("ij,ij->i", rows, rows)
    max_sq = float(sq.max())
    extra = np.sqrt(np.maximum(max_sq - sq, 0.0))
    return np.hstack([rows, extra[:, None]]), float(np.sqrt(max_sq))


class MipsIndex:
    def __init__(self, lm_head: np.ndarray, params: HnswParams = HnswParams()):
        rows = np.asarray(lm_head, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise BuildError("MIPS index needs at least one embedding row")
        if not np.all(np.isfinite(rows)):
            raise BuildError("embedding rows contain NaN or Inf")
        self.rows = rows
        self.augmented, self.max_norm = augment_rows(rows)
        self.params = params
        self.hnsw = HnswIndex(self.augmented, params)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]

    def query(self, h: np.ndarray, n: int, ef: Optional[int] = None) -> np.ndarray:
        """Up to ``n`` token ids approximately maximising ``<h, w>``, best first."""
        h = np.asarray(h, dtype=np.float64)
        if h.shape != (self.dim,):
            raise InputError(f"query must have dimension {self.dim}")
        n = min(int(n), len(self))
        if n < 1:
            return np.empty(0, dtype=np.int64)
        ids, _ = self.hnsw.search(np.append(h, 0.0), n, ef)
        scores = self.rows[ids] @ h
        return ids[np.lexsort((ids, -scores))]


def build_mips_index(lm_head: np.ndarray, params: HnswParams = HnswParams()) -> MipsIndex:
    return MipsIndex(lm_head, params)


def mips_query(index: MipsIndex, h: np.ndarray, n: int) -> np.ndarray:
    return index.query(h, n)


def brute_force_mips(rows: np.ndarray, h: np.ndarray, n: int) -> np.ndarray:
    scores = np.asarray(rows) @ np.asarray(h)
    ids = np.arange(scores.size)
    return ids[np.lexsort((ids, -scores))][:n]
