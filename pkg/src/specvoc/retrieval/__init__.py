"""Candidate retrieval for vocabulary expansion: MIPS over the LM head and a successor graph."""
from .candidates import CandidateConfig, CandidateSet, form_candidates
from .graph import CooccurrenceGraph, GraphThresholds, build_graph, graph_expand, load_graph, save_graph
from .hnsw import HnswIndex, HnswParams
from .mips import MipsIndex, brute_force_mips, build_mips_index, mips_query

__all__ = [
    "CandidateConfig", "CandidateSet", "form_candidates",
    "CooccurrenceGraph", "GraphThresholds", "build_graph", "graph_expand", "load_graph", "save_graph",
    "HnswIndex", "HnswParams",
    "MipsIndex", "brute_force_mips", "build_mips_index", "mips_query",
]
