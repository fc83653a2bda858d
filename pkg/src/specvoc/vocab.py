"""Static frequency core, the active vocabulary union, and coverage metrics."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from .errors import BuildError, InputError, InvariantViolation
from .models import topk

SVTK_MAGIC = b"SVTK"
_SVTK_HEADER = struct.Struct("<4sI")


@dataclass(frozen=True)
class StaticVocab:
    """The ``K_static`` most frequent tokens of a build corpus."""

    members: np.ndarray  # ascending ids
    source_counts: np.ndarray  # length |V|
    vocab_size: int
    mask: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        mask = np.zeros(self.vocab_size, dtype=bool)
        mask[self.members] = True
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, token) -> bool:
        return 0 <= token < self.vocab_size and bool(self.mask[token])

    @classmethod
    def full(cls, vocab_size: int) -> "StaticVocab":
        return cls(np.arange(vocab_size, dtype=np.int64), np.zeros(vocab_size, dtype=np.int64), vocab_size)


def build_static(corpus: Sequence[int], k_static: int, vocab_size: Optional[int] = None) -> StaticVocab:
    """Pick the ``k_static`` highest-count tokens, ties broken by smallest id."""
    corpus = np.asarray(corpus, dtype=np.int64).reshape(-1)
    if corpus.size == 0:
        raise BuildError("cannot build a static vocabulary from an empty corpus")
    if corpus.min() < 0:
        raise BuildError("negative token id in corpus")
    if vocab_size is None:
        vocab_size = int(corpus.max()) + 1
    elif corpus.max() >= vocab_size:
        raise BuildError(f"corpus token id >= vocab size {vocab_size}")
    if not 1 <= k_static <= vocab_size:
        raise BuildError(f"K_static must be in [1, {vocab_size}], got {k_static}")
    counts = np.bincount(corpus, minlength=vocab_size)
    order = np.lexsort((np.arange(vocab_size), -counts))
    members = np.sort(order[:k_static]).astype(np.int64)
    return StaticVocab(members, counts, vocab_size)


class ActiveVocab:
    """Immutable view of ``V_t = V_static ∪ dynamic``.

    Iteration yields static members then dynamic-only members, each
    ascending. ``ids`` is the fully sorted support used by the draft.
    """

    __slots__ = ("static", "dynamic", "budget", "mask", "ids")

    def __init__(self, static: StaticVocab, dynamic: Iterable[int] = (), budget: Optional[int] = None):
        dynamic = np.unique(np.asarray(list(dynamic), dtype=np.int64))
        if budget is not None and dynamic.size > budget:
            raise InvariantViolation(f"dynamic buffer holds {dynamic.size} > N_dyn={budget} tokens")
        if dynamic.size and (dynamic[0] < 0 or dynamic[-1] >= static.vocab_size):
            raise InputError("dynamic token out of range")
        self.static = static
        self.dynamic = dynamic
        self.budget = budget
        mask = static.mask.copy()
        mask[dynamic] = True
        mask.setflags(write=False)
        self.mask = mask
        self.ids = np.flatnonzero(mask)

    @property
    def vocab_size(self) -> int:
        return self.static.vocab_size

    def __len__(self) -> int:
        return self.ids.size

    def __contains__(self, token) -> bool:
        return 0 <= token < self.vocab_size and bool(self.mask[token])

    def __iter__(self):
        yield from (int(t) for t in self.static.members)
        yield from (int(t) for t in self.dynamic if not self.static.mask[t])

    @property
    def dynamic_only(self) -> np.ndarray:
        return self.dynamic[~self.static.mask[self.dynamic]]


def active_union(static: StaticVocab, dynamic: Iterable[int], budget: Optional[int] = None) -> ActiveVocab:
    return ActiveVocab(static, dynamic, budget)


def is_oov(vocab: ActiveVocab, token: int) -> bool:
    if not 0 <= token < vocab.vocab_size:
        raise InputError(f"token {token} out of range")
    return not vocab.mask[token]


@dataclass(frozen=True)
class CoverageReport:
    covered_mass: float
    recall_at_k: Dict[int, float]
    epsilon_cov: float = 0.05

    @property
    def below_tolerance(self) -> bool:
        return self.covered_mass < 1.0 - self.epsilon_cov


def coverage(vocab: ActiveVocab, target_dist: np.ndarray, ks: Sequence[int] = (10, 50, 100),
             epsilon_cov: float = 0.05) -> CoverageReport:
    """Target mass inside ``vocab`` and Recall@k of the target's top-k tokens.

    A ``k`` larger than the vocabulary is read as ``k = |V|``.
    """
    p = np.asarray(target_dist, dtype=np.float64)
    if p.shape != (vocab.vocab_size,):
        raise InputError("target distribution must cover the full vocabulary")
    if abs(p.sum() - 1.0) > 1e-6 or p.min() < 0:
        raise InputError("target distribution is not normalized")
    mass = float(p[vocab.mask].sum())
    recall = {}
    for k in ks:
        kk = min(int(k), p.size)
        ids, _ = topk(p, kk)
        recall[int(k)] = float(vocab.mask[ids].sum()) / kk
    return CoverageReport(min(1.0, mass), recall, epsilon_cov)


# ---------------------------------------------------------------------------
# corpus / static vocab files
# ---------------------------------------------------------------------------

def read_corpus(path, fmt: str = "auto") -> np.ndarray:
    """Read newline-delimited decimal ids (``text``) or an SVTK u32 stream (``binary``)."""
    path = Path(path)
    data = path.read_bytes()
    if fmt == "auto":
        fmt = "binary" if data[:4] == SVTK_MAGIC else "text"
    if fmt == "binary":
        if len(data) < _SVTK_HEADER.size:
            raise InputError(f"{path}: truncated SVTK header")
        magic, count = _SVTK_HEADER.unpack_from(data)
        if magic != SVTK_MAGIC:
            raise InputError(f"{path}: bad magic {magic!r}")
        body = data[_SVTK_HEADER.size:]
        if len(body) != 4 * count:
            raise InputError(f"{path}: header says {count} tokens, found {len(body) // 4}")
        return np.frombuffer(body, dtype="<u4").astype(np.int64)
    if fmt != "text":
        raise InputError(f"unknown corpus format {fmt!r}")
    tokens = []
    for lineno, line in enumerate(data.decode("ascii", errors="replace").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if not line.isdigit():
            raise InputError(f"{path}:{lineno}: not a token id: {line!r}")
        tokens.append(int(line))
    return np.asarray(tokens, dtype=np.int64)


def write_corpus(path, tokens: Sequence[int], fmt: str = "text") -> None:
    tokens = np.asarray(tokens, dtype=np.int64)
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(_SVTK_HEADER.pack(SVTK_MAGIC, tokens.size))
            fh.write(tokens.astype("<u4").tobytes())
    elif fmt == "text":
        Path(path).write_text("".join(f"{t}\n" for t in tokens))
    else:
        raise InputError(f"unknown corpus format {fmt!r}")


def save_static(path, static: StaticVocab) -> None:
    Path(path).write_text("".join(f"{t}\n" for t in static.members))


def load_static(path, vocab_size: int) -> StaticVocab:
    ids = read_corpus(path, "text")
    if ids.size == 0:
        raise InputError(f"{path}: empty static vocabulary")
    if ids.max() >= vocab_size:
        raise InputError(f"{path}: id outside vocabulary")
    return StaticVocab(np.unique(ids), np.zeros(vocab_size, dtype=np.int64), vocab_size)
