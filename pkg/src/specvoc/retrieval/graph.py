"""Pruned bigram successor graph.

Edges ``u -> v`` carry ``p(v|u) = count(u, v) / count(u, .)``. Filters are
applied in a fixed order: raw count, then probability threshold, then the
out-degree cap keeping the most probable successors (ties by smallest id).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np

from ..errors import BuildError, InputError


@dataclass(frozen=True)
class GraphThresholds:
    min_count: int = 5
    tau: float = 1e-4
    max_out_degree: int = 64


class CooccurrenceGraph:
    """CSR adjacency; each row sorted by descending probability then id."""

    def __init__(self, vocab_size: int, indptr, indices, probs, counts, thresholds: GraphThresholds,
                 totals=None, raw=None):
        self.vocab_size = int(vocab_size)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.probs = np.asarray(probs, dtype=np.float64)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.thresholds = thresholds
        self.totals = totals
        self._raw = raw  # (src, dst, count) before filtering

    @property
    def num_edges(self) -> int:
        return int(self.indices.size)

    def successors(self, token: int):
        """(successor ids, probabilities) of ``token``; empty if unknown."""
        if not 0 <= token < self.vocab_size:
            return self.indices[:0], self.probs[:0]
        lo, hi = self.indptr[token], self.indptr[token + 1]
        return self.indices[lo:hi], self.probs[lo:hi]

    def unfiltered_successors(self, token: int):
        if self._raw is None:
            raise InputError("graph was loaded without raw counts")
        src, dst, cnt = self._raw
        sel = src == token
        return dst[sel], cnt[sel] / self.totals[token]

    def edges(self):
        for u in range(self.vocab_size):
            lo, hi = self.indptr[u], self.indptr[u + 1]
            for k in range(lo, hi):
                yield u, int(self.indices[k]), float(self.probs[k]), int(self.counts[k])

    @classmethod
    def empty(cls, vocab_size: int) -> "CooccurrenceGraph":
        return cls(vocab_size, np.zeros(vocab_size + 1, dtype=np.int64), [], [], [], GraphThresholds())


def _bigrams(corpus) -> np.ndarray:
    streams = corpus if isinstance(corpus, (list, tuple)) and corpus and not np.isscalar(corpus[0]) else [corpus]
    pairs = []
    for s in streams:
        s = np.asarray(s, dtype=np.int64).reshape(-1)
        if s.size >= 2:
            pairs.append(np.stack([s[:-1], s[1:]], axis=1))
    if not pairs:
        raise BuildError("graph corpus needs at least two consecutive tokens")
    return np.concatenate(pairs)


def build_graph(corpus: Union[Sequence[int], List[Sequence[int]]], vocab_size: int,
                thresholds: GraphThresholds = GraphThresholds()) -> CooccurrenceGraph:
    """Count adjacent pairs of a stream (or of each stream in a list) and prune."""
    pairs = _bigrams(corpus)
    if pairs.min() < 0 or pairs.max() >= vocab_size:
        raise BuildError("graph corpus token outside vocabulary")
    keys, counts = np.unique(pairs[:, 0] * vocab_size + pairs[:, 1], return_counts=True)
    src, dst = keys // vocab_size, keys % vocab_size
    totals = np.bincount(src, weights=counts, minlength=vocab_size)
    probs = counts / totals[src]

    keep = counts >= thresholds.min_count
    keep &= probs >= thresholds.tau
    s, d, p, c = src[keep], dst[keep], probs[keep], counts[keep]
    order = np.lexsort((d, -p, s))
    s, d, p, c = s[order], d[order], p[order], c[order]
    # rank within each source row, then cap the out-degree
    starts = np.searchsorted(s, s, side="left")
    rank = np.arange(s.size) - starts
    cap = rank < thresholds.max_out_degree
    s, d, p, c = s[cap], d[cap], p[cap], c[cap]
    indptr = np.zeros(vocab_size + 1, dtype=np.int64)
    np.add.at(indptr, s + 1, 1)
    indptr = np.cumsum(indptr)
    return CooccurrenceGraph(vocab_size, indptr, d, p, c, thresholds, totals, (src, dst, counts))


def graph_expand(graph: CooccurrenceGraph, seeds: Iterable[int], per_seed: int = 8) -> List[int]:
    """Top ``per_seed`` successors of each seed in order, first occurrence kept."""
    out: List[int] = []
    seen = set()
    for seed in seeds:
        ids, _ = graph.successors(int(seed))
        for v in ids[:per_seed].tolist():
            if v not in seen:
                seen.add(v)
                out.append(v)
    return out


def save_graph(path, graph: CooccurrenceGraph) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "prob", "count"])
        for u, v, p, c in graph.edges():
            w.writerow([u, v, repr(p), c])


def load_graph(path, vocab_size: int, thresholds: GraphThresholds = GraphThresholds()) -> CooccurrenceGraph:
    rows = []
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["src", "dst", "prob", "count"]:
            raise InputError(f"{path}: expected header src,dst,prob,count")
        for rec in reader:
            try:
                rows.append((int(rec["src"]), int(rec["dst"]), float(rec["prob"]), int(rec["count"])))
            except (TypeError, ValueError) as exc:
                raise InputError(f"{path}: malformed row {rec}") from exc
    if rows and max(max(r[0], r[1]) for r in rows) >= vocab_size:
        raise InputError(f"{path}: token outside vocabulary")
    rows.sort(key=lambda r: (r[0], -r[2], r[1]))
    src = np.asarray([r[0] for r in rows], dtype=np.int64)
    indptr = np.zeros(vocab_size + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    return CooccurrenceGraph(vocab_size, np.cumsum(indptr), [r[1] for r in rows], [r[2] for r in rows],
                             [r[3] for r in rows], thresholds)
