"""Synthetic multi-domain worlds: target/draft pairs with controllable shift.

Geometry of the output embeddings ``W`` (|V| x d, column 0 unused):

* consecutive ids form clusters of ``cluster_size`` tokens sharing a centroid;
* every domain's hot block additionally shares a domain direction;
* each row carries independent noise.

Context structure lives at the cluster level. Inside each region (a domain's
hot block, or one maximal run of ids between hot blocks) the clusters are arranged
on one random cycle, and a token's input embedding points at the centroid of
the cluster after its own. A context therefore favours the clusters that
follow the clusters it has just visited, which gives the target predictable
bigram statistics without short loops. Column 0 of every input row is a
constant 1 so a low-rank adapter can express context-independent logit
shifts.

A domain's logit bias is a Zipf log-prior over ids plus ``bias_scale`` on its
hot block. The draft is built for one source domain: it shares ``W``, uses a
noisy copy of the input embeddings, and freezes the source domain's bias.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, InputError
from .models import DraftModel, Featurizer, LowRankAdapter, TargetModel


@dataclass(frozen=True)
class DomainSpec:
    name: str
    zipf: float = 1.0
    hot_start: int = 0
    hot_stop: int = 0
    bias_scale: float = 0.0
    zipf_offset: float = 0.0  # Zipf-Mandelbrot shift; 0 is plain Zipf

    @property
    def hot(self) -> range:
        return range(self.hot_start, self.hot_stop)

    def unigram_logits(self, vocab_size: int) -> np.ndarray:
        bias = -self.zipf * np.log1p(np.arange(vocab_size, dtype=np.float64) + self.zipf_offset)
        if self.hot_stop > self.hot_start:
            bias[self.hot_start:self.hot_stop] += self.bias_scale
        return bias


DEFAULT_DOMAINS = (
    DomainSpec("code", zipf=1.6, hot_start=640, hot_stop=1024, bias_scale=4.0, zipf_offset=20.0),
    DomainSpec("law", zipf=1.6, hot_start=1536, hot_stop=1920, bias_scale=4.0, zipf_offset=20.0),
    DomainSpec("med", zipf=1.6, hot_start=2432, hot_stop=2816, bias_scale=4.0, zipf_offset=20.0),
)


@dataclass(frozen=True)
class ModelSpec:
    seed: int = 0
    vocab_size: int = 4096
    hidden_dim: int = 32
    window: int = 4
    domains: Tuple[DomainSpec, ...] = DEFAULT_DOMAINS
    draft_domain: Optional[str] = "code"
    draft_noise: float = 0.3
    cluster_size: int = 16
    cluster_scale: float = 1.0
    domain_scale: float = 0.6
    token_noise: float = 0.8
    input_noise: float = 1.0
    collocation: float = 12.0

    def domain(self, name: str) -> DomainSpec:
        for d in self.domains:
            if d.name == name:
                return d
        raise ConfigError(f"unknown domain {name!r}")

    def validate(self) -> None:
        if self.vocab_size < 2 or self.hidden_dim < 2 or self.window < 1:
            raise ConfigError("vocab_size >= 2, hidden_dim >= 2 and window >= 1 required")
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate domain names")
        for d in self.domains:
            if not 0 <= d.hot_start <= d.hot_stop <= self.vocab_size:
                raise ConfigError(f"domain {d.name!r}: hot block outside vocabulary")
        if self.draft_domain is not None:
            self.domain(self.draft_domain)


@dataclass
class World:
    spec: ModelSpec
    target: TargetModel
    draft_featurizer: Featurizer
    draft_bias: Optional[np.ndarray]
    successor: np.ndarray = field(repr=False)  # cluster -> next cluster

    @property
    def vocab_size(self) -> int:
        return self.spec.vocab_size

    def make_draft(self, rank: int = 32, alpha: float = 32.0, seed: int = 0) -> DraftModel:
        """Fresh draft with a zero-effect adapter; the frozen parts are shared."""
        adapter = LowRankAdapter(self.spec.hidden_dim, rank, alpha, np.random.default_rng(seed))
        return DraftModel(self.draft_featurizer, self.target.lm_head, adapter, self.draft_bias)


_SCALAR_FIELDS = {
    "seed": int, "vocab_size": int, "hidden_dim": int, "window": int, "draft_noise": float,
    "cluster_size": int, "cluster_scale": float, "domain_scale": float, "token_noise": float,
    "input_noise": float, "collocation": float,
}


def parse_model_spec(text: str, source: str = "<model spec>") -> ModelSpec:
    """Read a model spec from ``key = value`` lines.

    ``domain = NAME ZIPF HOT_START HOT_STOP BIAS [OFFSET]`` may repeat; if present the
    listed domains replace the defaults. ``draft_domain = none`` gives a
    draft without a frozen domain prior.
    """
    from .config import iter_assignments

    kwargs: dict = {}
    domains = []
    for no, key, value in iter_assignments(text.splitlines(), source):
        try:
            if key == "domain":
                name, zipf, lo, hi, scale, *rest = value.split()
                if len(rest) > 1:
                    raise ValueError("too many fields")
                offset = float(rest[0]) if rest else 0.0
                domains.append(DomainSpec(name, float(zipf), int(lo), int(hi), float(scale), offset))
            elif key == "draft_domain":
                kwargs[key] = None if value.lower() == "none" else value
            elif key in _SCALAR_FIELDS:
                kwargs[key] = _SCALAR_FIELDS[key](value)
            else:
                raise ConfigError(f"{source}:{no}: unknown model key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"{source}:{no}: bad value for {key!r}: {value!r}") from exc
    if domains:
        kwargs["domains"] = tuple(domains)
    spec = ModelSpec(**kwargs)
    spec.validate()
    return spec


def format_model_spec(spec: ModelSpec) -> str:
    lines = [f"{name} = {getattr(spec, name)}" for name in _SCALAR_FIELDS]
    lines.append(f"draft_domain = {spec.draft_domain if spec.draft_domain is not None else 'none'}")
    for d in spec.domains:
        lines.append(f"domain = {d.name} {d.zipf!r} {d.hot_start} {d.hot_stop} {d.bias_scale!r} {d.zipf_offset!r}")
    return "\n".join(lines) + "\n"


def build_world(spec: ModelSpec = ModelSpec()) -> World:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    V, d = spec.vocab_size, spec.hidden_dim
    inner = d - 1

    def unit(n):
        x = rng.normal(size=(n, inner))
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    n_clusters = -(-V // spec.cluster_size)
    centroids = unit(n_clusters)
    cluster = np.arange(V) // spec.cluster_size
    W = np.zeros((V, d))
    W[:, 1:] = spec.cluster_scale * centroids[cluster]
    W[:, 1:] += spec.token_noise * rng.normal(size=(V, inner)) / np.sqrt(inner)
    region = np.full(V, -1)
    dom_dirs = unit(len(spec.domains))
    for k, dom in enumerate(spec.domains):
        W[dom.hot_start:dom.hot_stop, 1:] += spec.domain_scale * dom_dirs[k]
        region[dom.hot_start:dom.hot_stop] = k

    # background regions: each maximal run of ids outside every hot block
    free = region < 0
    run = np.cumsum(free & np.concatenate([[True], ~free[:-1]]))
    region[free] = -run[free]
    # the clusters of each region form one cycle; a cluster's region is that of its first token
    cluster_region = region[np.arange(n_clusters) * spec.cluster_size]
    successor = np.empty(n_clusters, dtype=np.int64)
    for r in np.unique(cluster_region):
        ring = rng.permutation(np.flatnonzero(cluster_region == r))
        successor[ring] = np.roll(ring, -1)

    E = np.zeros((V, d))
    E[:, 1:] = spec.input_noise * rng.normal(size=(V, inner)) / np.sqrt(inner)
    E[:, 1:] += spec.collocation * spec.cluster_scale * centroids[successor[cluster]]
    E[:, 0] = 1.0
    bos = np.zeros(d)
    bos[0] = 1.0
    featurizer = Featurizer(E, spec.window, bos)
    biases = {dom.name: dom.unigram_logits(V) for dom in spec.domains}
    target = TargetModel(featurizer, W, biases, spec.draft_domain)

    E_draft = E.copy()
    E_draft[:, 1:] += spec.draft_noise * rng.normal(size=(V, inner)) / np.sqrt(inner)
    draft_feat = Featurizer(E_draft, spec.window, bos)
    draft_bias = biases[spec.draft_domain] if spec.draft_domain is not None else None
    return World(spec, target, draft_feat, draft_bias, successor)


def gen_corpus(domain: DomainSpec, length: int, seed: int, vocab_size: int) -> np.ndarray:
    """I.i.d. tokens from the domain's unigram: Zipf over ids, hot block boosted."""
    if length < 1:
        raise InputError("corpus length must be >= 1")
    logits = domain.unigram_logits(vocab_size)
    p = np.exp(logits - logits.max())
    p /= p.sum()
    rng = np.random.default_rng(seed)
    return rng.choice(vocab_size, size=length, p=p).astype(np.int64)


def sample_target_corpus(target: TargetModel, domains: Sequence[str], n_streams: int, length: int,
                         seed: int, temperature: float = 1.0) -> list:
    """Ancestral samples from the target, ``n_streams`` parallel chains per domain."""
    rng = np.random.default_rng(seed)
    feat = target.featurizer
    E, W, m = feat.embedding_table, target.lm_head, feat.window
    streams = []
    for name in domains:
        bias = target.domain_bias[name]
        toks = np.empty((n_streams, length), dtype=np.int64)
        for t in range(length):
            if t == 0:
                H = np.tile(feat.bos_vector, (n_streams, 1))
            else:
                H = E[toks[:, max(0, t - m):t]].mean(axis=1)
            Z = (H @ W.T + bias) / temperature
            Z -= Z.max(axis=1, keepdims=True)
            P = np.exp(Z)
            cdf = np.cumsum(P, axis=1)
            u = rng.random(n_streams) * cdf[:, -1]
            toks[:, t] = np.minimum((cdf < u[:, None]).sum(axis=1), W.shape[0] - 1)
        streams.extend(list(toks))
    return streams
