"""Candidate formation for one out-of-vocabulary event."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .graph import CooccurrenceGraph, graph_expand
from .mips import MipsIndex


@dataclass(frozen=True)
class CandidateConfig:
    n_target: int = 10
    n_semantic: int = 10
    per_seed: int = 8
    cap: int = 32
    use_semantic: bool = True
    use_graph: bool = True


@dataclass
class CandidateSet:
    semantic: List[int] = field(default_factory=list)
    graph: List[int] = field(default_factory=list)
    merged: List[int] = field(default_factory=list)
    cap: int = 32


def _dedupe(*parts, exclude: Optional[np.ndarray] = None) -> List[int]:
    out, seen = [], set()
    for part in parts:
        for t in part:
            t = int(t)
            if t in seen or (exclude is not None and exclude[t]):
                continue
            seen.add(t)
            out.append(t)
    return out


def form_candidates(target_topk: Sequence[int], h: np.ndarray, index: Optional[MipsIndex],
                    graph: Optional[CooccurrenceGraph], config: CandidateConfig = CandidateConfig(),
                    exclude: Optional[np.ndarray] = None) -> CandidateSet:
    """Target top-n ∪ MIPS top-n seeds, their graph successors, deduped and capped.

    Formation order is target tokens, then semantic, then graph. ``exclude``
    (a boolean mask over the vocabulary, e.g. the static core) drops tokens
    before the cap so the cap counts only genuinely new insertions.
    """
    head = [int(t) for t in list(target_topk)[:config.n_target]]
    semantic: List[int] = []
    if config.use_semantic and index is not None:
        semantic = index.query(h, config.n_semantic).tolist()
    seeds = _dedupe(head, semantic)
    expanded: List[int] = []
    if config.use_graph and graph is not None:
        expanded = graph_expand(graph, seeds, config.per_seed)
    merged = _dedupe(seeds, expanded, exclude=exclude)[:config.cap]
    return CandidateSet(semantic, expanded, merged, config.cap)
