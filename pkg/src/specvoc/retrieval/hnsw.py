"""Hierarchical navigable small world graph over squared-L2 distance.

Nodes are inserted in id order. A node's top layer is drawn as
``floor(-ln(U) / ln(M))`` from a seeded generator, so the whole structure is
a pure function of the points and the parameters. Layer 0 allows ``2 * M``
neighbours, upper layers ``M``. New edges are chosen with the diversity
heuristic; overfull neighbour lists are shrunk to the closest entries.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np


@dataclass(frozen=True)
class HnswParams:
    m: int = 32
    ef_construction: int = 200
    ef_search: int = 64
    seed: int = 0

    @property
    def m0(self) -> int:
        return 2 * self.m

    @property
    def level_mult(self) -> float:
        return 1.0 / math.log(self.m) if self.m > 1 else 1.0


class HnswIndex:
    def __init__(self, points: np.ndarray, params: HnswParams = HnswParams()):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self.params = params
        n = self.points.shape[0]
        self.sq_norms = np.einsum("ij,ij->i", self.points, self.points)
        rng = np.random.default_rng(params.seed)
        u = rng.random(n)
        self.levels = np.floor(-np.log(1.0 - u) * params.level_mult).astype(np.int64)
        # layers[l] maps node -> int array of neighbours; layer 0 is a list
        self.layer0: List[np.ndarray] = [np.empty(0, dtype=np.int64)] * n
        self.upper: List[Dict[int, np.ndarray]] = [dict() for _ in range(int(self.levels.max()) if n else 0)]
        self._tags = np.zeros(n, dtype=np.int64)
        self._tag = 0
        self.entry = -1
        self.max_level = -1
        for node in range(n):
            self._insert(node)

    def __len__(self) -> int:
        return self.points.shape[0]

    # -- graph access --------------------------------------------------

    def neighbors(self, node: int, layer: int) -> np.ndarray:
        if layer == 0:
            return self.layer0[node]
        return self.upper[layer - 1].get(node, np.empty(0, dtype=np.int64))

    def _set_neighbors(self, node: int, layer: int, nbrs: np.ndarray) -> None:
        if layer == 0:
            self.layer0[node] = nbrs
        else:
            self.upper[layer - 1][node] = nbrs

    def _dist(self, q: np.ndarray, q_sq: float, ids: np.ndarray) -> np.ndarray:
        return self.sq_norms[ids] + q_sq - 2.0 * (self.points[ids] @ q)

    # -- search --------------------------------------------------------

    def _search_layer(self, q, q_sq, entries, ef: int, layer: int):
        """Beam search; returns a list of (dist, id) sorted ascending."""
        self._tag += 1
        tag = self._tag
        tags = self._tags
        entry_ids = np.asarray([e for _, e in entries], dtype=np.int64)
        tags[entry_ids] = tag
        candidates = list(entries)
        heapq.heapify(candidates)
        results = [(-d, e) for d, e in entries]
        heapq.heapify(results)
        while len(results) > ef:
            heapq.heappop(results)
        while candidates:
            d, c = heapq.heappop(candidates)
            if d > -results[0][0] and len(results) >= ef:
                break
            nbrs = self.neighbors(c, layer)
            if nbrs.size == 0:
                continue
            nbrs = nbrs[tags[nbrs] != tag]
            if nbrs.size == 0:
                continue
            tags[nbrs] = tag
            ds = self._dist(q, q_sq, nbrs)
            worst = -results[0][0]
            for dd, nb in zip(ds.tolist(), nbrs.tolist()):
                if len(results) < ef or dd < worst:
                    heapq.heappush(candidates, (dd, nb))
                    heapq.heappush(results, (-dd, nb))
                    if len(results) > ef:
                        heapq.heappop(results)
                    worst = -results[0][0]
        return sorted((-d, e) for d, e in results)

    def _greedy_descent(self, q, q_sq, target_layer: int):
        ep = self.entry
        d = float(self._dist(q, q_sq, np.asarray([ep]))[0])
        best = [(d, ep)]
        for layer in range(self.max_level, target_layer, -1):
            best = self._search_layer(q, q_sq, best, 1, layer)[:1]
        return best

    def search(self, q: np.ndarray, k: int, ef: Optional[int] = None):
        """Approximate k nearest neighbours as (ids, squared distances)."""
        n = len(self)
        ef = max(k, self.params.ef_search if ef is None else ef)
        q = np.asarray(q, dtype=np.float64)
        q_sq = float(q @ q)
        if ef >= n:
            # the beam would cover the whole index: scan exhaustively
            ids = np.arange(n)
            ds = self._dist(q, q_sq, ids)
            order = np.lexsort((ids, ds))[:k]
            return ids[order], ds[order]
        eps = self._greedy_descent(q, q_sq, 0)
        found = self._search_layer(q, q_sq, eps, ef, 0)[:k]
        return (np.asarray([e for _, e in found], dtype=np.int64),
                np.asarray([d for d, _ in found], dtype=np.float64))

    # -- construction --------------------------------------------------

    def _select_heuristic(self, cand, m: int) -> np.ndarray:
        """Keep a candidate only if it is closer to the base than to every kept one."""
        if len(cand) <= m:
            return np.asarray([e for _, e in cand], dtype=np.int64)
        ids = np.asarray([e for _, e in cand], dtype=np.int64)
        dists = [d for d, _ in cand]
        pts = self.points[ids]
        sq = self.sq_norms[ids]
        pair = sq[:, None] + sq[None, :] - 2.0 * (pts @ pts.T)
        # closer[i, j]: candidate j is nearer to i than the base is
        closer = (pair < np.asarray(dists)[:, None]).tolist()
        kept: List[int] = []
        pruned: List[int] = []
        for i in range(len(ids)):
            row = closer[i]
            if any(row[j] for j in kept):
                pruned.append(i)
                continue
            kept.append(i)
            if len(kept) >= m:
                break
        for i in pruned:
            if len(kept) >= m:
                break
            kept.append(i)
        return ids[kept]

    def _shrink(self, node: int, nbrs: np.ndarray, m: int) -> np.ndarray:
        p = self.points[node]
        diff = self.points[nbrs] - p
        ds = np.einsum("ij,ij->i", diff, diff)
        order = np.lexsort((nbrs, ds))[:m]
        return nbrs[order]

    def _insert(self, node: int) -> None:
        level = int(self.levels[node])
        if self.entry < 0:
            self.entry, self.max_level = node, level
            for layer in range(1, level + 1):
                self._set_neighbors(node, layer, np.empty(0, dtype=np.int64))
            return
        q = self.points[node]
        q_sq = float(self.sq_norms[node])
        eps = self._greedy_descent(q, q_sq, level)
        for layer in range(min(level, self.max_level), -1, -1):
            cand = self._search_layer(q, q_sq, eps, self.params.ef_construction, layer)
            m_max = self.params.m0 if layer == 0 else self.params.m
            chosen = self._select_heuristic(cand, self.params.m)
            self._set_neighbors(node, layer, chosen)
            for nb in chosen.tolist():
                cur = self.neighbors(nb, layer)
                grown = np.append(cur, node)
                if grown.size > m_max:
                    grown = self._shrink(nb, grown, m_max)
                self._set_neighbors(nb, layer, grown)
            eps = cand
        for layer in range(self.max_level + 1, level + 1):
            self._set_neighbors(node, layer, np.empty(0, dtype=np.int64))
        if level > self.max_level:
            self.entry, self.max_level = node, level
