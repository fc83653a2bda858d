"""Draft-verify decoding loop over a reduced, evolving vocabulary.

One call to :meth:`SpeculativeEngine.step` is one verification round:

1. snapshot the active vocabulary ``V_t``;
2. draft a chain of ``gamma`` tokens restricted to ``V_t``;
3. verify against the target (rejection sampling, or argmax matching at
   temperature 0) producing one :class:`VerificationEvent` per position;
4. out-of-vocabulary events enqueue retrieval tasks (vocabulary expansion),
   in-vocabulary events go to the alignment controller;
5. finished retrieval tasks are applied to the ARC cache, visible from the
   next round on;
6. the simulated clock advances.

Rejection sampling treats the draft probability as exactly zero outside
``V_t``. Tokens the draft cannot propose are then recovered by the residual
``max(0, p - q)``, so the emitted tokens follow the target distribution no
matter how small ``V_t`` is.
"""
from __future__ import annotations

import logging
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np

from .cache import ArcCache
from .errors import InputError, InvariantViolation
from .models import DraftModel, TargetModel, softmax, topk
from .retrieval.candidates import CandidateConfig, CandidateSet, form_candidates
from .retrieval.graph import CooccurrenceGraph
from .retrieval.mips import MipsIndex
from .vocab import ActiveVocab, StaticVocab, coverage

if TYPE_CHECKING:
    from .alignment import AlignmentController

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatencyModel:
    """Per-step timings in milliseconds for the simulated clock."""

    retrieval_ms: float = 2.07
    step_body_ms: float = 3.754
    projection_ms: float = 0.561
    sampling_ms: float = 0.025

    @property
    def gpu_ms(self) -> float:
        return self.step_body_ms + self.projection_ms + self.sampling_ms


def simulated_step_time(latency: LatencyModel, pending_retrievals: int = 0) -> float:
    """GPU step time, extended only by retrieval work that outlasts it.

    ``pending_retrievals`` tasks run back to back on one CPU worker, in
    parallel with the GPU step.
    """
    gpu = latency.gpu_ms
    remaining = pending_retrievals * latency.retrieval_ms
    return gpu + max(0.0, remaining - gpu)


@dataclass(frozen=True)
class Paths:
    """Which adaptive paths an engine runs."""

    expand: bool = True
    semantic: bool = True
    graph: bool = True
    align: bool = True


VARIANTS = {
    "static_only": Paths(expand=False, semantic=False, graph=False, align=False),
    "+hnsw": Paths(expand=True, semantic=True, graph=False, align=False),
    "+graph": Paths(expand=True, semantic=True, graph=True, align=False),
    "no_alignment": Paths(expand=True, semantic=True, graph=True, align=False),
    "static_align": Paths(expand=False, semantic=False, graph=False, align=True),
    "full": Paths(expand=True, semantic=True, graph=True, align=True),
}


@dataclass(frozen=True)
class EngineConfig:
    gamma: int = 6
    token_budget: int = 60
    temperature: float = 0.0
    k_logit: int = 64
    eps_cov: float = 0.05
    dyn_size: int = 256
    arc_p0: Optional[int] = None
    ghost_caps: Tuple[int, int] = (256, 256)
    min_residency: int = 8
    warmup: int = 50
    candidates: CandidateConfig = CandidateConfig()
    latency: LatencyModel = LatencyModel()
    retrieval_mode: str = "simulated"  # simulated | sync | threads
    workers: int = 1
    seed: int = 0
    track_coverage: bool = False
    coverage_ks: Tuple[int, ...] = (10, 50, 100)

    @property
    def chain_length(self) -> int:
        return min(self.gamma, self.token_budget)


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

class RandomSampler:
    """Bernoulli and categorical draws from one seeded generator."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def bernoulli(self, prob: float) -> bool:
        return bool(self.rng.random() < prob)

    def categorical(self, probs: np.ndarray) -> int:
        cdf = np.cumsum(probs)
        u = self.rng.random() * cdf[-1]
        k = int(np.searchsorted(cdf, u, side="right"))
        if k >= cdf.size or probs[k] <= 0:
            k = int(np.flatnonzero(probs > 0)[-1])
        return k


# ---------------------------------------------------------------------------
# drafting and verification
# ---------------------------------------------------------------------------

@dataclass
class DraftStep:
    token: int
    probs: np.ndarray  # aligned with the support ids used for drafting


def draft_chain(draft: DraftModel, context: Sequence[int], vocab: ActiveVocab, gamma: int,
                temperature: float, sampler) -> List[DraftStep]:
    """Autoregressively propose ``gamma`` tokens from the restricted draft."""
    if len(vocab) == 0:
        raise InputError("cannot draft over an empty vocabulary")
    if gamma < 1:
        raise InputError("draft horizon must be >= 1")
    ids = vocab.ids
    ctx = list(context)
    steps: List[DraftStep] = []
    for _ in range(gamma):
        q = draft.restricted_distribution(draft.featurize(ctx), ids, temperature)
        k = int(np.argmax(q)) if temperature == 0 else sampler.categorical(q)
        tok = int(ids[k])
        steps.append(DraftStep(tok, q))
        ctx.append(tok)
    return steps


@dataclass
class VerificationEvent:
    """One verified position. The target's top-``k_logit`` view is computed on first use."""

    position: int
    token: int
    logits: np.ndarray = field(repr=False)
    k_logit: int
    hidden: np.ndarray = field(repr=False)
    draft_proposed: Optional[int]
    rejected: bool
    oov: bool
    _top: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False, compare=False)

    def _topk(self) -> Tuple[np.ndarray, np.ndarray]:
        if self._top is None:
            self._top = topk(self.logits, self.k_logit)
        return self._top

    @property
    def topk_ids(self) -> np.ndarray:
        return self._topk()[0]

    @property
    def topk_logits(self) -> np.ndarray:
        return self._topk()[1]

    def retained(self) -> Tuple[np.ndarray, np.ndarray]:
        """The retained ``(ids, logits)`` as a set, for divergences.

        Same support as :attr:`topk_ids`, but when every logit is kept the
        ids come in id order and no sort is needed.
        """
        n = self.logits.shape[0]
        if self.k_logit >= n:
            return np.arange(n, dtype=np.int64), self.logits
        return self._topk()


@dataclass
class VerifyResult:
    accepted: List[int]
    final: int
    events: List[VerificationEvent]
    logits: List[np.ndarray] = field(repr=False, default_factory=list)

    @property
    def emitted(self) -> List[int]:
        return self.accepted + [self.final]


def accept_probability(p_token: float, q_token: float) -> float:
    if q_token <= 0:
        raise InvariantViolation("draft proposed a token outside its own support")
    return min(1.0, p_token / q_token)


def residual_distribution(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    r = np.maximum(p - q, 0.0)
    s = r.sum()
    if s <= 0:
        raise InvariantViolation("empty residual after a rejection")
    return r / s


def verify(target: TargetModel, context: Sequence[int], proposals: Sequence[DraftStep],
           temperature: float, sampler, vocab: ActiveVocab, k_logit: int = 64) -> VerifyResult:
    ids = vocab.ids
    n = len(proposals)
    ctx = list(context)
    accepted: List[int] = []
    events: List[VerificationEvent] = []
    all_logits: List[np.ndarray] = []
    k_logit = min(k_logit, target.vocab_size)
    final = -1
    for j in range(n + 1):
        h = target.featurize(ctx)
        logits = target.full_logits(h)
        all_logits.append(logits)
        proposal = proposals[j] if j < n else None
        if temperature == 0:
            best = int(np.argmax(logits))
            ok = proposal is not None and proposal.token == best
            token = best
        else:
            p = softmax(logits, temperature)
            if proposal is None:
                ok = False
                token = int(sampler.categorical(p))
            else:
                pos = int(np.searchsorted(ids, proposal.token))
                q_tok = float(proposal.probs[pos]) if pos < ids.size and ids[pos] == proposal.token else 0.0
                ok = sampler.bernoulli(accept_probability(float(p[proposal.token]), q_tok))
                if ok:
                    token = proposal.token
                else:
                    q = np.zeros_like(p)
                    q[ids] = proposal.probs
                    token = int(sampler.categorical(residual_distribution(p, q)))
        events.append(VerificationEvent(
            position=j, token=token, logits=logits, k_logit=k_logit, hidden=h,
            draft_proposed=None if proposal is None else proposal.token,
            rejected=proposal is not None and not ok, oov=not vocab.mask[token]))
        if ok:
            accepted.append(token)
            ctx.append(token)
        else:
            final = token
            break
    return VerifyResult(accepted, final, events, all_logits)


# ---------------------------------------------------------------------------
# asynchronous retrieval
# ---------------------------------------------------------------------------

@dataclass
class RetrievalTask:
    trigger: VerificationEvent
    step: int
    enqueue_time: float
    completion_time: Optional[float] = None
    result: Optional[CandidateSet] = None
    future: Optional[Future] = field(default=None, repr=False)


@dataclass
class EngineMetrics:
    rounds: int = 0
    emitted: int = 0
    oov_events: int = 0
    retrieval_tasks: int = 0
    retrieval_applied: int = 0
    cache_hits: int = 0
    peak_dynamic: int = 0
    budget_violations: int = 0
    coverage_steps: int = 0
    mass_sum: float = 0.0
    recall_sums: dict = field(default_factory=dict)
    accept_lengths: List[int] = field(default_factory=list)

    @property
    def mal(self) -> float:
        return self.emitted / self.rounds if self.rounds else 0.0

    @property
    def mean_mass(self) -> float:
        return self.mass_sum / self.coverage_steps if self.coverage_steps else float("nan")

    def mean_recall(self) -> dict:
        return {k: v / self.coverage_steps for k, v in self.recall_sums.items()} if self.coverage_steps else {}


class SpeculativeEngine:
    def __init__(self, target: TargetModel, draft: DraftModel, static: StaticVocab,
                 config: EngineConfig = EngineConfig(), index: Optional[MipsIndex] = None,
                 graph: Optional[CooccurrenceGraph] = None, controller: "Optional[AlignmentController]" = None,
                 paths: Paths = Paths()):
        if target.vocab_size != draft.vocab_size or static.vocab_size != target.vocab_size:
            raise InputError("target, draft and static vocabulary disagree on |V|")
        self.target = target
        self.draft = draft
        self.static = static
        self.config = config
        self.index = index
        self.graph = graph
        self.controller = controller
        self.paths = paths
        b1, b2 = config.ghost_caps
        self.cache = ArcCache(config.dyn_size, config.arc_p0, b1, b2, config.min_residency, config.warmup)
        self.sampler = RandomSampler(np.random.default_rng(config.seed))
        self.candidate_config = CandidateConfig(
            config.candidates.n_target, config.candidates.n_semantic, config.candidates.per_seed,
            config.candidates.cap, use_semantic=paths.semantic, use_graph=paths.graph)
        self.context: List[int] = []
        self.step_index = 0
        self.clock_ms = 0.0
        self.metrics = EngineMetrics()
        self._pending: List[RetrievalTask] = []
        self._hits: List[int] = []
        self._executor: Optional[ThreadPoolExecutor] = None
        if config.retrieval_mode == "threads":
            self._executor = ThreadPoolExecutor(max_workers=max(1, config.workers))
        elif config.retrieval_mode not in ("simulated", "sync"):
            raise InputError(f"unknown retrieval mode {config.retrieval_mode!r}")

    # -- state ---------------------------------------------------------

    def snapshot(self) -> ActiveVocab:
        return ActiveVocab(self.static, self.cache.members(), self.config.dyn_size)

    def reset_context(self, prompt: Sequence[int] = ()) -> None:
        self.context = [int(t) for t in prompt]

    def set_domain(self, domain: Optional[str]) -> None:
        self.target = self.target.with_domain(domain)

    # -- main loop -----------------------------------------------------

    def step(self) -> List[int]:
        cfg = self.config
        vocab = self.snapshot()
        base = list(self.context)
        proposals = draft_chain(self.draft, base, vocab, cfg.chain_length, cfg.temperature, self.sampler)
        result = verify(self.target, base, proposals, cfg.temperature, self.sampler, vocab, cfg.k_logit)
        self._finish_round(vocab, base, result)
        return result.emitted

    def forced_step(self, token: int) -> VerificationEvent:
        """One round whose verified output is ``token`` (teacher forcing).

        Nothing is drafted; the target still scores the position, so OOV
        handling, alignment and coverage tracking behave as in :meth:`step`.
        """
        vocab = self.snapshot()
        if not 0 <= token < self.target.vocab_size:
            raise InputError(f"token {token} outside the vocabulary")
        base = list(self.context)
        h = self.target.featurize(base)
        logits = self.target.full_logits(h)
        ev = VerificationEvent(0, int(token), logits, min(self.config.k_logit, self.target.vocab_size), h,
                               None, False, not vocab.mask[token])
        self._finish_round(vocab, base, VerifyResult([], int(token), [ev], [logits]))
        return ev

    def _finish_round(self, vocab: ActiveVocab, base: List[int], result: VerifyResult) -> None:
        cfg = self.config
        step = self.step_index
        emitted = result.emitted
        enqueued = 0
        for ev in result.events:
            if ev.oov:
                self.metrics.oov_events += 1
                if self.paths.expand and self._enqueue(ev, step):
                    enqueued += 1
            elif self.paths.expand and ev.token in self.cache:
                self._hits.append(ev.token)
        if self.paths.align and self.controller is not None:
            self.controller.observe_round(self.draft, base, result, vocab, step)

        self._apply_completed(step)
        if self.controller is not None:
            self.controller.step_boundary(self.draft, step)

        if cfg.retrieval_mode == "simulated":
            self.clock_ms += simulated_step_time(cfg.latency, enqueued)
        else:
            self.clock_ms += simulated_step_time(cfg.latency, 0)
        self.context.extend(emitted)
        m = self.metrics
        m.rounds += 1
        m.emitted += len(emitted)
        m.accept_lengths.append(len(emitted))
        if cfg.track_coverage:
            self._record_coverage(vocab, result.logits[0])
        self.step_index += 1

    def generate(self, n_tokens: int) -> List[int]:
        out: List[int] = []
        while len(out) < n_tokens:
            out.extend(self.step())
        return out

    def close(self) -> None:
        """Wait for in-flight retrieval work and apply it."""
        if self._executor is not None:
            for task in self._pending:
                task.future.result()
            self._apply_completed(self.step_index)
            self._executor.shutdown()
            self._executor = None

    # -- path A --------------------------------------------------------

    def _enqueue(self, ev: VerificationEvent, step: int) -> bool:
        for task in self._pending:
            if task.step == step and task.trigger.token == ev.token:
                return False
        task = RetrievalTask(ev, step, enqueue_time=self.clock_ms)
        if self._executor is not None:
            task.future = self._executor.submit(self._retrieve, ev)
        self._pending.append(task)
        self.metrics.retrieval_tasks += 1
        return True

    def _retrieve(self, ev: VerificationEvent) -> CandidateSet:
        return form_candidates(ev.topk_ids, ev.hidden, self.index, self.graph, self.candidate_config,
                               exclude=self.static.mask)

    def _apply_completed(self, step: int) -> None:
        for token in self._hits:
            if self.cache.touch(token, step):
                self.metrics.cache_hits += 1
        self._hits.clear()
        still: List[RetrievalTask] = []
        for task in self._pending:
            if task.future is not None:
                if not task.future.done():
                    still.append(task)
                    continue
                task.result = task.future.result()
            else:
                task.result = self._retrieve(task.trigger)
            task.completion_time = task.enqueue_time + self.config.latency.retrieval_ms
            self.cache.admit(task.result.merged, step)
            self.metrics.retrieval_applied += 1
            occupancy = len(self.cache)
            if occupancy > self.config.dyn_size:
                self.metrics.budget_violations += 1
                raise InvariantViolation(f"dynamic buffer {occupancy} exceeds N_dyn={self.config.dyn_size}")
            self.metrics.peak_dynamic = max(self.metrics.peak_dynamic, occupancy)
        self._pending = still

    # -- metrics -------------------------------------------------------

    def _record_coverage(self, vocab: ActiveVocab, logits: np.ndarray) -> None:
        t = self.config.temperature if self.config.temperature > 0 else 1.0
        rep = coverage(vocab, softmax(logits, t), self.config.coverage_ks, self.config.eps_cov)
        m = self.metrics
        m.coverage_steps += 1
        m.mass_sum += rep.covered_mass
        for k, v in rep.recall_at_k.items():
            m.recall_sums[k] = m.recall_sums.get(k, 0.0) + v
