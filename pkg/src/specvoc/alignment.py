"""Online draft alignment through the low-rank adapter.

Verified in-vocabulary positions whose draft/target divergence exceeds a gate
(or whose draft proposal was rejected) go into a replay buffer together with
the target's top-``K_logit`` logits for the following horizon steps. When the
buffer fills, one SGD step is taken on

    J = sum_entries sum_j  w_j * T^2 * KL(softmax(z_p / T) || softmax(z_q / T))

where both softmaxes live on the entry's retained ids and
``w_j = exp(-beta * L_base * (j - 1))`` with ``L_base`` the draft's
cross-entropy on the verified first token.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import InputError
from .models import DraftModel, check_tokens, head_rows, log_softmax

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CurriculumConfig:
    beta: float = 0.3
    gamma: int = 6


@dataclass(frozen=True)
class DistillConfig:
    t_kd: float = 1.0
    k_logit: int = 64
    lr: float = 1e-5


def curriculum_weight(l_base: float, j: int, beta: float) -> float:
    if l_base < 0 or j < 1 or beta < 0:
        raise InputError("curriculum weight needs L_base >= 0, j >= 1, beta >= 0")
    return math.exp(-beta * l_base * (j - 1))


def curriculum_weights(l_base: float, horizon: int, beta: float) -> np.ndarray:
    return np.exp(-beta * l_base * np.arange(horizon))


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    nz = p > 0
    return float(np.sum(p[nz] * (np.log(p[nz]) - np.log(q[nz]))))


def retained_kl(z_p: np.ndarray, z_q: np.ndarray, t_kd: float = 1.0) -> float:
    """KL between the tempered softmaxes of two logit vectors on one support."""
    lp = log_softmax(z_p, t_kd)
    lq = log_softmax(z_q, t_kd)
    return float(np.sum(np.exp(lp) * (lp - lq)))


def gate(event, draft_logits: np.ndarray, eps_align: float, t_kd: float = 1.0) -> Tuple[bool, float]:
    """Replay eligibility of a verified in-vocabulary event and its divergence."""
    d = retained_kl(event.retained()[1], draft_logits, t_kd)
    return (d > eps_align) or bool(event.rejected), d


@dataclass
class ReplayEntry:
    """Self-contained snapshot of one verified position.

    ``context`` holds the last ``window`` tokens before the position,
    ``continuation`` the verified tokens that extend it for later horizon
    steps, and ``steps[j]`` the retained target ``(ids, logits)`` at step j+1.
    """

    context: Tuple[int, ...]
    continuation: Tuple[int, ...]
    steps: List[Tuple[np.ndarray, np.ndarray]]
    token: int
    l_base: float

    @property
    def horizon(self) -> int:
        return len(self.steps)

    def step_context(self, j: int) -> List[int]:
        return list(self.context) + list(self.continuation[:j])


class ReplayBuffer:
    def __init__(self, capacity: int = 32):
        if capacity < 1:
            raise InputError("buffer capacity must be positive")
        self.capacity = capacity
        self.entries: List[ReplayEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.capacity

    def add(self, entry: ReplayEntry) -> None:
        if self.full:
            raise InputError("replay buffer is full")
        self.entries.append(entry)

    def clear(self) -> None:
        self.entries.clear()


@dataclass
class LossResult:
    loss: float
    grad_a: np.ndarray
    grad_b: np.ndarray
    mean_weights: List[float]


def distill_loss(entries: Sequence[ReplayEntry], draft: DraftModel, curriculum: CurriculumConfig = CurriculumConfig(),
                 distill: DistillConfig = DistillConfig()) -> LossResult:
    """Weighted tempered KL over the buffer and its exact adapter gradient.

    The target side is a constant; gradients flow only through the draft.
    With ``h' = h + s * A @ (B.T @ h)`` and ``g = dJ/dh'``:
    ``dJ/dA = s * g (B.T h)^T`` and ``dJ/dB = s * h (A.T g)^T``.
    """
    if len(entries) == 0:
        raise InputError("distillation needs a nonempty buffer")
    adapter = draft.adapter
    s = adapter.scale
    t = distill.t_kd
    grad_a = np.zeros_like(adapter.A)
    grad_b = np.zeros_like(adapter.B)
    total = 0.0
    horizon = max(e.horizon for e in entries)
    wsum = np.zeros(horizon)
    wcnt = np.zeros(horizon)
    vocab_size = draft.vocab_size
    for e in entries:
        check_tokens(e.context, vocab_size)
        check_tokens(e.continuation, vocab_size)
        n = min(e.horizon, curriculum.gamma)
        w = curriculum_weights(e.l_base, n, curriculum.beta)
        for j in range(n):
            ids, z_p = e.steps[j]
            h = draft.base_hidden(e.step_context(j))
            bh = adapter.B.T @ h
            h2 = h + s * (adapter.A @ bh)
            z_q = draft.logits_at(h2, ids)
            lp = log_softmax(z_p, t)
            lq = log_softmax(z_q, t)
            p_hat = np.exp(lp)
            q_tilde = np.exp(lq)
            total += w[j] * t * t * float(np.sum(p_hat * (lp - lq)))
            # d/dz_q of T^2 KL(p || softmax(z_q / T)) = T (q - p)
            g_z = w[j] * t * (q_tilde - p_hat)
            g_h = head_rows(draft.lm_head, ids).T @ g_z
            grad_a += s * np.outer(g_h, bh)
            grad_b += s * np.outer(h, adapter.A.T @ g_h)
            wsum[j] += w[j]
            wcnt[j] += 1
    mean_w = (wsum / np.maximum(wcnt, 1)).tolist()
    return LossResult(total, grad_a, grad_b, mean_w)


def apply_update(draft: DraftModel, grad_a: np.ndarray, grad_b: np.ndarray, lr: float) -> bool:
    """Plain gradient descent on the adapter only; skips non-finite gradients."""
    adapter = draft.adapter
    if grad_a.shape != adapter.A.shape or grad_b.shape != adapter.B.shape:
        raise InputError("gradient shapes do not match the adapter")
    if not (np.all(np.isfinite(grad_a)) and np.all(np.isfinite(grad_b))):
        log.warning("non-finite adapter gradient; update skipped")
        return False
    adapter.A -= lr * grad_a
    adapter.B -= lr * grad_b
    adapter.version += 1
    return True


@dataclass
class UpdateRecord:
    step: int
    buffer_size: int
    loss: float
    mean_weights: List[float]
    grad_norm_a: float
    grad_norm_b: float
    applied: bool = True

    def to_json(self) -> str:
        return json.dumps({
            "step": self.step, "buffer_size": self.buffer_size, "loss": self.loss,
            "mean_w": self.mean_weights, "grad_norm_A": self.grad_norm_a,
            "grad_norm_B": self.grad_norm_b, "applied": self.applied,
        }, sort_keys=True)


class AlignmentController:
    """Gates verified events into the buffer and fires an update when it fills.

    Updates are swapped into the adapter at a step boundary, optionally
    ``update_delay`` rounds after the buffer filled.
    """

    def __init__(self, curriculum: CurriculumConfig = CurriculumConfig(), distill: DistillConfig = DistillConfig(),
                 buffer_size: int = 32, eps_align: float = 0.05, update_delay: int = 0):
        self.curriculum = curriculum
        self.distill = distill
        self.buffer = ReplayBuffer(buffer_size)
        self.eps_align = eps_align
        self.update_delay = update_delay
        self.trace: List[UpdateRecord] = []
        self.gated = 0
        self.observed = 0
        self._scheduled: List[Tuple[int, LossResult, int]] = []

    @property
    def updates(self) -> int:
        return sum(1 for r in self.trace if r.applied)

    def observe_round(self, draft: DraftModel, base_context: Sequence[int], result, vocab, step: int) -> None:
        emitted = result.emitted
        window = draft.featurizer.window
        events = result.events
        for i, ev in enumerate(events):
            if ev.oov:
                continue
            self.observed += 1
            ctx = list(base_context) + emitted[:i]
            h = draft.featurize(ctx)
            eligible, _ = gate(ev, draft.logits_at(h, ev.retained()[0]), self.eps_align, self.distill.t_kd)
            if not eligible:
                continue
            self.gated += 1
            log_q = log_softmax(draft.logits_at(h, vocab.ids), 1.0)
            l_base = float(-log_q[int(np.searchsorted(vocab.ids, ev.token))])
            last = min(len(events), i + self.curriculum.gamma)
            entry = ReplayEntry(
                context=tuple(ctx[-window:]),
                continuation=tuple(emitted[i:last - 1]),
                steps=[events[k].retained() for k in range(i, last)],
                token=ev.token, l_base=l_base)
            self.buffer.add(entry)
            if self.buffer.full:
                self._fire(draft, step)

    def _fire(self, draft: DraftModel, step: int) -> None:
        res = distill_loss(self.buffer.entries, draft, self.curriculum, self.distill)
        self._scheduled.append((step + self.update_delay, res, len(self.buffer)))
        self.buffer.clear()

    def step_boundary(self, draft: DraftModel, step: int) -> None:
        due = [s for s in self._scheduled if s[0] <= step]
        self._scheduled = [s for s in self._scheduled if s[0] > step]
        for _, res, size in due:
            ok = apply_update(draft, res.grad_a, res.grad_b, self.distill.lr)
            self.trace.append(UpdateRecord(step, size, res.loss, res.mean_weights,
                                           float(np.linalg.norm(res.grad_a)), float(np.linalg.norm(res.grad_b)), ok))

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.trace:
                fh.write(rec.to_json() + "\n")
