"""Toy linear-softmax language models.

Both models map a token context to a hidden vector by averaging the
embedding rows of the last ``window`` tokens, then project onto the
vocabulary with an output-embedding matrix::

    logits = lm_head @ h (+ logit bias)

The draft model additionally carries a low-rank adapter applied to the
averaged hidden state; the adapter is the only mutable state in this
module.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import InputError

SVEM_MAGIC = b"SVEM"
SVEM_VERSION = 1
_SVEM_HEADER = struct.Struct("<4sIII")


# ---------------------------------------------------------------------------
# numerics shared by the engine and alignment code
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Softmax at ``temperature``; temperature 0 is a point mass on the argmax.

    Ties for the argmax go to the lowest index, so callers that keep ids in
    ascending order get the smallest-token-id rule for free.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if temperature < 0:
        raise InputError(f"temperature must be >= 0, got {temperature}")
    if temperature == 0:
        out = np.zeros_like(logits)
        out[int(np.argmax(logits))] = 1.0
        return out
    z = logits / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def log_softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def check_tokens(tokens: Sequence[int], vocab_size: int) -> np.ndarray:
    arr = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if arr.size and (arr.min() < 0 or arr.max() >= vocab_size):
        raise InputError(f"token id out of range [0, {vocab_size})")
    return arr


# ---------------------------------------------------------------------------
# model parts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Featurizer:
    """Mean of the embedding rows of the last ``window`` context tokens."""

    embedding_table: np.ndarray
    window: int = 4
    bos_vector: Optional[np.ndarray] = None

    def __post_init__(self):
        table = np.asarray(self.embedding_table, dtype=np.float64)
        if table.ndim != 2 or table.shape[0] < 2:
            raise InputError("embedding table must be |V| x d with |V| >= 2")
        if not np.all(np.isfinite(table)):
            raise InputError("embedding table has non-finite entries")
        if self.window < 1:
            raise InputError("window must be positive")
        bos = np.zeros(table.shape[1]) if self.bos_vector is None else np.asarray(self.bos_vector, dtype=np.float64)
        if bos.shape != (table.shape[1],):
            raise InputError("bos vector must have dimension d")
        object.__setattr__(self, "embedding_table", table)
        object.__setattr__(self, "bos_vector", bos)

    @property
    def vocab_size(self) -> int:
        return self.embedding_table.shape[0]

    @property
    def dim(self) -> int:
        return self.embedding_table.shape[1]

    def __call__(self, context: Sequence[int]) -> np.ndarray:
        if len(context) == 0:
            return self.bos_vector.copy()
        tail = check_tokens(context[-self.window:], self.vocab_size)
        return self.embedding_table[tail].mean(axis=0)


class LowRankAdapter:
    """Additive rank-``r`` correction ``(alpha / r) * A @ B.T`` to a d x d map.

    ``A`` starts random with std ``1/sqrt(d)`` unless told otherwise, ``B`` starts at zero, so a fresh adapter
    is exactly the identity correction.
    """

    def __init__(self, dim: int, rank: int = 32, alpha: float = 32.0,
                 rng: Optional[np.random.Generator] = None, init_scale: Optional[float] = None):
        if rank < 1 or dim < 1:
            raise InputError("adapter rank and dim must be positive")
        if alpha <= 0:
            raise InputError("adapter alpha must be positive")
        rng = np.random.default_rng(0) if rng is None else rng
        self.rank = int(rank)
        self.alpha = float(alpha)
        if init_scale is None:
            init_scale = 1.0 / np.sqrt(dim)
        self.A = rng.normal(0.0, init_scale, size=(dim, rank))
        self.B = np.zeros((dim, rank))
        self.version = 0

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def delta(self) -> np.ndarray:
        return self.scale * (self.A @ self.B.T)

    def apply(self, h: np.ndarray) -> np.ndarray:
        return h + self.scale * (self.A @ (self.B.T @ h))

    def reset(self) -> None:
        self.B[:] = 0.0
        self.version += 1

    def copy(self) -> "LowRankAdapter":
        other = LowRankAdapter.__new__(LowRankAdapter)
        other.rank, other.alpha = self.rank, self.alpha
        other.A, other.B = self.A.copy(), self.B.copy()
        other.version = self.version
        return other


def _check_head(lm_head: np.ndarray, dim: int) -> np.ndarray:
    head = np.asarray(lm_head, dtype=np.float64)
    if head.ndim != 2 or head.shape[1] != dim:
        raise InputError("lm_head must be |V| x d matching the featurizer")
    if not np.all(np.isfinite(head)):
        raise InputError("lm_head has non-finite entries")
    return head


@dataclass(frozen=True)
class TargetModel:
    """The verifier. ``domain`` selects one of ``domain_bias`` as logit offset."""

    featurizer: Featurizer
    lm_head: np.ndarray
    domain_bias: Mapping[str, np.ndarray] = field(default_factory=dict)
    domain: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "lm_head", _check_head(self.lm_head, self.featurizer.dim))
        if self.lm_head.shape[0] != self.featurizer.vocab_size:
            raise InputError("lm_head and embedding table disagree on |V|")
        for name, bias in self.domain_bias.items():
            if np.shape(bias) != (self.vocab_size,):
                raise InputError(f"domain bias {name!r} must have length |V|")
        if self.domain is not None and self.domain not in self.domain_bias:
            raise InputError(f"unknown domain {self.domain!r}")

    @property
    def vocab_size(self) -> int:
        return self.lm_head.shape[0]

    @property
    def dim(self) -> int:
        return self.lm_head.shape[1]

    @property
    def bias(self) -> Optional[np.ndarray]:
        return None if self.domain is None else self.domain_bias[self.domain]

    def with_domain(self, domain: Optional[str]) -> "TargetModel":
        """Same weights, different active domain (arrays are shared)."""
        return TargetModel(self.featurizer, self.lm_head, self.domain_bias, domain)

    def featurize(self, context: Sequence[int]) -> np.ndarray:
        return self.featurizer(context)

    def full_logits(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=np.float64)
        if h.shape != (self.dim,):
            raise InputError(f"hidden vector must have dimension {self.dim}")
        logits = self.lm_head @ h
        if self.domain is not None:
            logits = logits + self.domain_bias[self.domain]
        return logits

    def distribution(self, context: Sequence[int], temperature: float = 1.0) -> np.ndarray:
        return softmax(self.full_logits(self.featurize(context)), temperature)


class DraftModel:
    """The proposer: frozen featurizer, head and logit bias plus a trainable adapter."""

    def __init__(self, featurizer: Featurizer, lm_head: np.ndarray, adapter: LowRankAdapter,
                 logit_bias: Optional[np.ndarray] = None):
        self.featurizer = featurizer
        self.lm_head = _check_head(lm_head, featurizer.dim)
        if self.lm_head.shape[0] != featurizer.vocab_size:
            raise InputError("lm_head and embedding table disagree on |V|")
        if adapter.A.shape[0] != featurizer.dim:
            raise InputError("adapter dimension must match featurizer")
        self.adapter = adapter
        if logit_bias is not None:
            logit_bias = np.asarray(logit_bias, dtype=np.float64)
            if logit_bias.shape != (self.vocab_size,):
                raise InputError("draft logit bias must have length |V|")
        self.logit_bias = logit_bias

    @classmethod
    def from_target(cls, target: TargetModel, rank: int = 32, alpha: float = 32.0,
                    rng: Optional[np.random.Generator] = None) -> "DraftModel":
        """A draft that matches ``target`` exactly until its adapter moves."""
        return cls(target.featurizer, target.lm_head, LowRankAdapter(target.dim, rank, alpha, rng), target.bias)

    @property
    def vocab_size(self) -> int:
        return self.lm_head.shape[0]

    @property
    def dim(self) -> int:
        return self.lm_head.shape[1]

    def base_hidden(self, context: Sequence[int]) -> np.ndarray:
        return self.featurizer(context)

    def featurize(self, context: Sequence[int]) -> np.ndarray:
        return self.adapter.apply(self.featurizer(context))

    def full_logits(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=np.float64)
        if h.shape != (self.dim,):
            raise InputError(f"hidden vector must have dimension {self.dim}")
        logits = self.lm_head @ h
        if self.logit_bias is not None:
            logits = logits + self.logit_bias
        return logits

    def logits_at(self, h: np.ndarray, ids: np.ndarray) -> np.ndarray:
        """Logits restricted to ``ids``; costs O(|ids| * d) rather than O(|V| * d)."""
        logits = head_rows(self.lm_head, ids) @ h
        if self.logit_bias is not None:
            logits = logits + (self.logit_bias if is_full_range(ids, self.vocab_size) else self.logit_bias[ids])
        return logits

    def restricted_distribution(self, h: np.ndarray, support: np.ndarray,
                                temperature: float = 1.0) -> np.ndarray:
        """Softmax over ``support`` only (probabilities aligned with ``support``).

        ``support`` must be sorted ascending for the temperature-0 tie rule.
        """
        support = np.asarray(support, dtype=np.int64)
        if support.size == 0:
            raise InputError("restricted distribution needs a nonempty support")
        h = np.asarray(h, dtype=np.float64)
        if h.shape != (self.dim,):
            raise InputError(f"hidden vector must have dimension {self.dim}")
        return softmax(self.logits_at(h, support), temperature)


def is_full_range(ids: np.ndarray, n: int) -> bool:
    """True when ``ids`` is exactly ``0..n-1`` in order."""
    return ids.shape[0] == n and n > 0 and ids[0] == 0 and ids[-1] == n - 1 and bool(np.all(ids[1:] > ids[:-1]))


def head_rows(matrix: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """``matrix[ids]`` without the copy when ``ids`` covers every row in order."""
    return matrix if is_full_range(ids, matrix.shape[0]) else matrix[ids]


def target_topk_logits(target: TargetModel, h: np.ndarray, k_logit: int):
    """Ids and raw logits of the ``k_logit`` largest logits, descending, ties by id."""
    logits = target.full_logits(h)
    return topk(logits, k_logit)


def topk(values: np.ndarray, k: int):
    n = values.shape[0]
    if not 1 <= k <= n:
        raise InputError(f"k must be in [1, {n}], got {k}")
    if k == n:
        ids = np.argsort(-values, kind="stable")
    else:
        kth = np.partition(values, n - k)[n - k]
        cand = np.flatnonzero(values >= kth)
        ids = cand[np.lexsort((cand, -values[cand]))][:k]
    return ids.astype(np.int64), values[ids]


# ---------------------------------------------------------------------------
# embedding persistence
# ---------------------------------------------------------------------------

def save_embeddings(path, matrix: np.ndarray) -> None:
    """Write ``matrix`` as an SVEM file: 16-byte header then row-major float32."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise InputError("embedding matrix must be 2-D")
    rows, cols = matrix.shape
    with open(path, "wb") as fh:
        fh.write(_SVEM_HEADER.pack(SVEM_MAGIC, SVEM_VERSION, rows, cols))
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def load_embeddings(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _SVEM_HEADER.size:
        raise InputError(f"{path}: truncated SVEM header")
    magic, version, rows, cols = _SVEM_HEADER.unpack_from(data)
    if magic != SVEM_MAGIC:
        raise InputError(f"{path}: bad magic {magic!r}")
    if version != SVEM_VERSION:
        raise InputError(f"{path}: unsupported SVEM version {version}")
    body = data[_SVEM_HEADER.size:]
    if len(body) != rows * cols * 4:
        raise InputError(f"{path}: expected {rows * cols} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float64)
