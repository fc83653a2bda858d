"""Self-checks with independent oracles, shared by ``specvoc selftest`` and the tests.

* :func:`enumerate_round` explores every random branch of one draft/verify
  round exactly, so the output distribution can be compared with the target
  without sampling error.
* :class:`ReferenceArc` is a second ARC implementation written from the
  policy rules alone (plain lists, no shared code with :mod:`specvoc.cache`).
* :func:`gradient_check` compares the analytic adapter gradients with
  central finite differences.
* :func:`mips_check` verifies the norm-augmentation ordering by brute force
  and measures HNSW recall.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .alignment import CurriculumConfig, DistillConfig, ReplayEntry, distill_loss
from .cache import ArcCache
from .engine import DraftStep, draft_chain, verify
from .errors import InvariantViolation
from .models import DraftModel, Featurizer, LowRankAdapter, TargetModel, softmax
from .retrieval.hnsw import HnswParams
from .retrieval.mips import MipsIndex, augment_rows, brute_force_mips
from .vocab import ActiveVocab, StaticVocab


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


# ---------------------------------------------------------------------------
# exact enumeration of decoding rounds
# ---------------------------------------------------------------------------

class ScriptedSampler:
    """Replays a fixed prefix of choices, then always takes the first option.

    Every call records its options with their probabilities, so a driver can
    walk the full decision tree.
    """

    def __init__(self, prefix: Sequence[object]):
        self.prefix = list(prefix)
        self.trace: List[Tuple[object, List[Tuple[object, float]]]] = []

    def _choose(self, options: List[Tuple[object, float]]):
        options = [(v, w) for v, w in options if w > 0]
        i = len(self.trace)
        value = self.prefix[i] if i < len(self.prefix) else options[0][0]
        self.trace.append((value, options))
        return value

    def bernoulli(self, prob: float) -> bool:
        prob = min(1.0, max(0.0, float(prob)))
        return bool(self._choose([(True, prob), (False, 1.0 - prob)]))

    def categorical(self, probs: np.ndarray) -> int:
        p = np.asarray(probs, dtype=np.float64)
        total = p.sum()
        return int(self._choose([(k, float(p[k] / total)) for k in np.flatnonzero(p > 0)]))

    def weight(self) -> float:
        w = 1.0
        for value, options in self.trace:
            w *= dict(options)[value]
        return w


def enumerate_outcomes(run: Callable[[ScriptedSampler], object]) -> Dict[object, float]:
    """Probability of every outcome of ``run`` over all sampler branches."""
    out: Dict[object, float] = defaultdict(float)
    stack: List[List[object]] = [[]]
    while stack:
        prefix = stack.pop()
        s = ScriptedSampler(prefix)
        outcome = run(s)
        out[outcome] += s.weight()
        for i in range(len(prefix), len(s.trace)):
            chosen, options = s.trace[i]
            head = [v for v, _ in s.trace[:i]]
            for v, _ in options:
                if v != chosen:
                    stack.append(head + [v])
    return dict(out)


def enumerate_round(target: TargetModel, draft: DraftModel, vocab: ActiveVocab, context: Sequence[int],
                    gamma: int, temperature: float = 1.0) -> Dict[Tuple[int, ...], float]:
    """Exact distribution of the tokens one round emits, using the engine's own code."""
    def run(s: ScriptedSampler):
        proposals = draft_chain(draft, context, vocab, gamma, temperature, s)
        return tuple(verify(target, context, proposals, temperature, s, vocab).emitted)
    return enumerate_outcomes(run)


def prefix_distribution(target: TargetModel, draft: DraftModel, vocab: ActiveVocab, context: Sequence[int],
                        gamma: int, length: int, temperature: float = 1.0) -> Dict[Tuple[int, ...], float]:
    """Exact law of the first ``length`` generated tokens, chaining rounds as needed."""
    out: Dict[Tuple[int, ...], float] = defaultdict(float)
    frontier = [((), 1.0)]
    while frontier:
        done, w = frontier.pop()
        for emitted, p in enumerate_round(target, draft, vocab, list(context) + list(done), gamma,
                                          temperature).items():
            seq = done + emitted
            if len(seq) >= length:
                out[seq[:length]] += w * p
            else:
                frontier.append((seq, w * p))
    return dict(out)


def target_prefix_distribution(target: TargetModel, context: Sequence[int], length: int,
                               temperature: float = 1.0) -> Dict[Tuple[int, ...], float]:
    out: Dict[Tuple[int, ...], float] = {(): 1.0}
    for _ in range(length):
        nxt: Dict[Tuple[int, ...], float] = {}
        for seq, w in out.items():
            p = target.distribution(list(context) + list(seq), temperature)
            for t in np.flatnonzero(p > 0):
                nxt[seq + (int(t),)] = w * float(p[t])
        out = nxt
    return out


def total_variation(a: Dict, b: Dict) -> float:
    keys = set(a) | set(b)
    return 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys)


def random_pair(vocab_size: int, dim: int, rng: np.random.Generator, window: int = 2,
                scale: float = 1.5) -> Tuple[TargetModel, DraftModel]:
    """Unrelated random target and draft sharing only the vocabulary size."""
    def model_parts():
        E = rng.normal(size=(vocab_size, dim))
        return Featurizer(E, window, rng.normal(size=dim)), scale * rng.normal(size=(vocab_size, dim))

    feat_t, head_t = model_parts()
    target = TargetModel(feat_t, head_t, {"main": rng.normal(size=vocab_size)}, "main")
    feat_d, head_d = model_parts()
    draft = DraftModel(feat_d, head_d, LowRankAdapter(dim, 2, 2.0, rng, init_scale=0.3),
                       rng.normal(size=vocab_size))
    return target, draft


def reduced_vocab(vocab_size: int, size: int, rng: np.random.Generator) -> ActiveVocab:
    ids = np.sort(rng.choice(vocab_size, size=size, replace=False))
    return ActiveVocab(StaticVocab(ids.astype(np.int64), np.zeros(vocab_size, dtype=np.int64), vocab_size))


def lossless_enumeration_check(trials: int = 5, vocab_size: int = 8, gamma: int = 2, support: int = 4,
                               length: int = 2, seed: int = 0, temperature: float = 1.0,
                               tol: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        target, draft = random_pair(vocab_size, 4, rng)
        vocab = reduced_vocab(vocab_size, support, rng)
        ctx = [int(t) for t in rng.integers(vocab_size, size=3)]
        got = prefix_distribution(target, draft, vocab, ctx, gamma, length, temperature)
        want = target_prefix_distribution(target, ctx, length, temperature)
        worst = max(worst, total_variation(got, want))
    return CheckResult("lossless enumeration", worst < tol,
                       f"max TV {worst:.2e} over {trials} random pairs (|V|={vocab_size}, gamma={gamma}, "
                       f"|V_t|={support}, first {length} tokens)")


def faulty_support_check(seed: int = 0) -> CheckResult:
    """Injected fault: a draft proposal outside ``V_t``, which must be refused."""
    rng = np.random.default_rng(seed)
    target, draft = random_pair(8, 4, rng)
    vocab = reduced_vocab(8, 4, rng)
    outside = int(np.flatnonzero(~vocab.mask)[0])
    probs = np.full(len(vocab), 1.0 / len(vocab))
    bad = [DraftStep(outside, probs)]
    verify(target, [0], bad, 1.0, ScriptedSampler([]), vocab)
    return CheckResult("support fault", False, "a proposal outside V_t was verified without complaint")


# ---------------------------------------------------------------------------
# reference ARC
# ---------------------------------------------------------------------------

class ReferenceArc:
    """ARC from the policy statement, with min residency and warm-up disabled.

    Lists are python lists in LRU -> MRU order. Ghost hits move ``p`` by
    ``max(1, floor(|other ghost| / |hit ghost|))`` and re-admit to T2. After
    each insertion, while over capacity, evict the LRU of T1 if ``|T1| > p``
    and of T2 otherwise, never the token being inserted, falling back to
    the other list when the chosen one has nothing to give.
    """

    def __init__(self, capacity: int, p0: int, b1_cap: int, b2_cap: int):
        self.c = capacity
        self.p = p0
        self.caps = (b1_cap, b2_cap)
        self.T1: List[int] = []
        self.T2: List[int] = []
        self.B1: List[int] = []
        self.B2: List[int] = []

    def state(self):
        return tuple(self.T1), tuple(self.T2), tuple(self.B1), tuple(self.B2), self.p

    def touch(self, x: int) -> bool:
        if x in self.T1:
            self.T1.remove(x)
            self.T2.append(x)
            return True
        if x in self.T2:
            self.T2.remove(x)
            self.T2.append(x)
            return True
        return False

    def admit(self, xs: Sequence[int]) -> List[int]:
        evicted = []
        for x in xs:
            if self.touch(x):
                continue
            if x in self.B1:
                self.p = min(self.c, self.p + max(1, len(self.B2) // len(self.B1)))
                self.B1.remove(x)
                self.T2.append(x)
            elif x in self.B2:
                self.p = max(0, self.p - max(1, len(self.B1) // len(self.B2)))
                self.B2.remove(x)
                self.T2.append(x)
            else:
                self.T1.append(x)
            while len(self.T1) + len(self.T2) > self.c:
                evicted.append(self._evict(x))
        return evicted

    def _evict(self, incoming: int) -> int:
        first = 1 if len(self.T1) > self.p else 2
        for which in (first, 3 - first):
            lst, ghost, cap = (self.T1, self.B1, self.caps[0]) if which == 1 else (self.T2, self.B2, self.caps[1])
            victims = [t for t in lst if t != incoming]
            if victims:
                lst.remove(victims[0])
                ghost.append(victims[0])
                del ghost[:max(0, len(ghost) - cap)]
                return victims[0]
        raise AssertionError("nothing to evict")


def random_arc_trace(n_ops: int, universe: int, rng: np.random.Generator, max_admit: int = 4) -> List[tuple]:
    ops = []
    for _ in range(n_ops):
        if rng.random() < 0.35:
            ops.append(("touch", int(rng.integers(universe))))
        else:
            k = int(rng.integers(1, max_admit + 1))
            ops.append(("admit", tuple(int(t) for t in rng.choice(universe, size=k, replace=False))))
    return ops


def arc_equivalence_check(n_ops: int = 10_000, trials: int = 3, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    for trial in range(trials):
        c = int(rng.integers(4, 33))
        universe = int(rng.integers(c + 2, 4 * c + 8))
        p0 = int(rng.integers(0, c + 1))
        b1, b2 = int(rng.integers(1, 2 * c)), int(rng.integers(1, 2 * c))
        cache = ArcCache(c, p0, b1, b2, min_residency=0, warmup_events=0)
        ref = ReferenceArc(c, p0, b1, b2)
        for i, (kind, arg) in enumerate(random_arc_trace(n_ops, universe, rng)):
            if kind == "touch":
                got, want = cache.touch(arg, i), ref.touch(arg)
            else:
                got, want = cache.admit(arg, i), ref.admit(arg)
            if got != want or cache.state() != ref.state():
                return CheckResult("arc equivalence", False, f"trial {trial} diverged at op {i} ({kind} {arg})")
            if len(cache) > c:
                return CheckResult("arc equivalence", False, f"trial {trial}: budget exceeded at op {i}")
    return CheckResult("arc equivalence", True, f"{trials} traces x {n_ops} ops identical to the reference")


# ---------------------------------------------------------------------------
# distillation gradient
# ---------------------------------------------------------------------------

def random_distill_instance(rng: np.random.Generator, vocab_size: int = 12, dim: int = 6, rank: int = 2,
                            n_entries: int = 3, horizon: int = 3, k: int = 4):
    feat = Featurizer(rng.normal(size=(vocab_size, dim)), 2, rng.normal(size=dim))
    adapter = LowRankAdapter(dim, rank, float(rank), rng, init_scale=0.5)
    adapter.B = rng.normal(size=adapter.B.shape) * 0.5
    draft = DraftModel(feat, rng.normal(size=(vocab_size, dim)), adapter, rng.normal(size=vocab_size))
    entries = []
    for _ in range(n_entries):
        ids_per_step = [np.sort(rng.choice(vocab_size, size=k, replace=False)) for _ in range(horizon)]
        steps = [(ids, 2.0 * rng.normal(size=k)) for ids in ids_per_step]
        entries.append(ReplayEntry(tuple(int(t) for t in rng.integers(vocab_size, size=2)),
                                   tuple(int(t) for t in rng.integers(vocab_size, size=horizon - 1)),
                                   steps, int(rng.integers(vocab_size)), float(rng.uniform(0, 3))))
    return draft, entries


def finite_difference(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + eps
        up = f()
        arr[idx] = old - eps
        down = f()
        arr[idx] = old
        g[idx] = (up - down) / (2 * eps)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-300))


def tempered_kl_reference(z_p: np.ndarray, z_q: np.ndarray, t: float) -> float:
    """KL(softmax(z_p/t) || softmax(z_q/t)) computed from probabilities."""
    p = np.exp(z_p / t - np.max(z_p / t))
    p /= p.sum()
    q = np.exp(z_q / t - np.max(z_q / t))
    q /= q.sum()
    return float(np.sum(p * np.log(p / q)))


def reference_distill_loss(entries: Sequence[ReplayEntry], draft: DraftModel, beta: float, t: float) -> float:
    total = 0.0
    for e in entries:
        for j, (ids, z_p) in enumerate(e.steps):
            z_q = draft.full_logits(draft.featurize(e.step_context(j)))[ids]
            total += math.exp(-beta * e.l_base * j) * t * t * tempered_kl_reference(z_p, z_q, t)
    return total


def gradient_check(instances: int = 50, temps: Sequence[float] = (0.5, 1.0, 2.0), seed: int = 0,
                   tol: float = 1e-4) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_grad, worst_loss = 0.0, 0.0
    for i in range(instances):
        t = float(temps[i % len(temps)])
        beta = float(rng.uniform(0, 1))
        draft, entries = random_distill_instance(rng)
        cur, dist = CurriculumConfig(beta, 8), DistillConfig(t_kd=t)
        res = distill_loss(entries, draft, cur, dist)
        ref = reference_distill_loss(entries, draft, beta, t)
        worst_loss = max(worst_loss, abs(res.loss - ref) / max(1.0, abs(ref)))

        def f() -> float:
            return distill_loss(entries, draft, cur, dist).loss
        ga = finite_difference(f, draft.adapter.A)
        gb = finite_difference(f, draft.adapter.B)
        worst_grad = max(worst_grad, relative_error(res.grad_a, ga), relative_error(res.grad_b, gb))
    ok = worst_grad < tol and worst_loss < 1e-9
    return CheckResult("distillation gradient", ok,
                       f"max rel. gradient error {worst_grad:.1e}, max loss mismatch {worst_loss:.1e} "
                       f"over {instances} instances, T in {tuple(temps)}")


# ---------------------------------------------------------------------------
# MIPS
# ---------------------------------------------------------------------------

def augmented_order_check(n: int = 512, dim: int = 16, queries: int = 20, seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    rows = rng.normal(size=(n, dim)) * rng.uniform(0.2, 3.0, size=(n, 1))
    aug, _ = augment_rows(rows)
    for _ in range(queries):
        h = rng.normal(size=dim)
        d2 = np.sum((aug - np.append(h, 0.0)) ** 2, axis=1)
        ip = rows @ h
        ids = np.arange(n)
        # compare as rankings; exact ties are broken by id in both
        if not np.array_equal(ids[np.lexsort((ids, d2))], ids[np.lexsort((ids, -ip))]):
            return False
    return True


def hnsw_recall(n: int = 5000, dim: int = 32, queries: int = 100, k: int = 10, seed: int = 0,
                params: Optional[HnswParams] = None) -> float:
    rng = np.random.default_rng(seed)
    rows = rng.normal(size=(n, dim))
    index = MipsIndex(rows, params or HnswParams(seed=seed))
    hits = 0
    for _ in range(queries):
        h = rng.normal(size=dim)
        hits += len(set(index.query(h, k).tolist()) & set(brute_force_mips(rows, h, k).tolist()))
    return hits / (queries * k)


def mips_check(n: int = 5000, seed: int = 0, threshold: float = 0.95) -> CheckResult:
    order_ok = augmented_order_check(seed=seed)
    recall = hnsw_recall(n=n, seed=seed)
    return CheckResult("mips", order_ok and recall >= threshold,
                       f"augmented ordering {'exact' if order_ok else 'WRONG'}, HNSW recall@10 {recall:.3f} "
                       f"on {n}x32")


# ---------------------------------------------------------------------------

def run_selftest(fast: bool = False, inject_fault: bool = False) -> Tuple[List[CheckResult], bool]:
    """Run every check; returns the results and whether an invariant violation surfaced.

    ``fast`` shrinks the gradient, ARC and recall workloads for quick smoke runs.
    """
    results: List[CheckResult] = []
    violation = False
    checks: List[Callable[[], CheckResult]] = [
        lambda: lossless_enumeration_check(),
        lambda: gradient_check(instances=6 if fast else 50),
        lambda: arc_equivalence_check(n_ops=1000 if fast else 10_000, trials=1 if fast else 3),
        lambda: mips_check(n=1000 if fast else 5000),
    ]
    if inject_fault:
        checks.insert(0, faulty_support_check)
    for check in checks:
        try:
            results.append(check())
        except InvariantViolation as exc:
            violation = True
            results.append(CheckResult(getattr(check, "__name__", "check").replace("_", " "), False,
                                       f"invariant violation: {exc}"))
    return results, violation
