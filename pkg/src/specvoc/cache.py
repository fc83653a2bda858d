"""Adaptive Replacement Cache holding the dynamic part of the active vocabulary.

Resident tokens live in T1 (seen once) or T2 (seen again); evicted tokens
leave a ghost in B1 or B2. A ghost hit steers the adaptive target ``p``
(the desired size of T1) toward the list that would have kept the token.

On top of textbook ARC this cache carries three safeguards:

* ``min_residency``: a token is not evicted until it has been resident for
  that many decoding steps since its last touch, unless nothing resident is
  old enough;
* ``warmup_events``: ``p`` is frozen during the first admission events;
* ghost lists have fixed capacities instead of the classic directory bound.
"""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterable, List, Optional

from .errors import InvariantViolation


class ArcCache:
    def __init__(self, capacity: int = 256, p0: Optional[int] = None,
                 b1_cap: int = 256, b2_cap: int = 256,
                 min_residency: int = 8, warmup_events: int = 50):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.p = min(self.capacity, max(0, self.capacity // 2 if p0 is None else int(p0)))
        self.b1_cap = int(b1_cap)
        self.b2_cap = int(b2_cap)
        self.min_residency = int(min_residency)
        self.warmup_events = int(warmup_events)
        # token -> step of admission or last touch; iteration order is LRU -> MRU
        self.t1: OrderedDict = OrderedDict()
        self.t2: OrderedDict = OrderedDict()
        self.b1: OrderedDict = OrderedDict()
        self.b2: OrderedDict = OrderedDict()
        self.events = 0
        self.current_step = 0
        self.forced_evictions = 0

    def __len__(self) -> int:
        return len(self.t1) + len(self.t2)

    def __contains__(self, token) -> bool:
        return token in self.t1 or token in self.t2

    def members(self) -> set:
        return set(self.t1) | set(self.t2)

    @property
    def frozen(self) -> bool:
        return self.events < self.warmup_events

    def touch(self, token: int, step: int) -> bool:
        """Register a hit. Residents move to T2 MRU; misses change nothing."""
        self.current_step = step
        if token in self.t1:
            del self.t1[token]
            self.t2[token] = step
            return True
        if token in self.t2:
            self.t2.move_to_end(token)
            self.t2[token] = step
            return True
        return False

    def admit(self, tokens: Iterable[int], step: int) -> List[int]:
        """Insert candidate tokens from one retrieval event; returns evicted tokens."""
        self.current_step = step
        frozen = self.frozen
        evicted: List[int] = []
        for token in tokens:
            if token in self.t1 or token in self.t2:
                self.touch(token, step)
                continue
            if token in self.b1:
                if not frozen:
                    delta = max(1, len(self.b2) // len(self.b1))
                    self.p = min(self.capacity, self.p + delta)
                del self.b1[token]
                self.t2[token] = step
            elif token in self.b2:
                if not frozen:
                    delta = max(1, len(self.b1) // len(self.b2))
                    self.p = max(0, self.p - delta)
                del self.b2[token]
                self.t2[token] = step
            else:
                self.t1[token] = step
            while len(self) > self.capacity:
                evicted.append(self._evict(step, incoming=token))
        self.events += 1
        if len(self) > self.capacity:
            raise InvariantViolation(f"ARC budget exceeded: {len(self)} > {self.capacity}")
        return evicted

    def _evict(self, step: int, incoming: int) -> int:
        if len(self.t1) > self.p:
            order = ((self.t1, self.b1, self.b1_cap), (self.t2, self.b2, self.b2_cap))
        else:
            order = ((self.t2, self.b2, self.b2_cap), (self.t1, self.b1, self.b1_cap))
        for mature_only in (True, False):
            for lst, ghost, cap in order:
                for token, since in lst.items():
                    if token == incoming:
                        continue
                    if mature_only and step - since < self.min_residency:
                        continue
                    if not mature_only:
                        self.forced_evictions += 1
                    del lst[token]
                    ghost[token] = None
                    while len(ghost) > cap:
                        ghost.popitem(last=False)
                    return token
        raise InvariantViolation("eviction requested from an empty cache")

    def dump(self) -> str:
        """Debug dump: one line per list, residents as ``id@step``."""
        lines = [
            "T1: " + ", ".join(f"{t}@{s}" for t, s in self.t1.items()),
            "T2: " + ", ".join(f"{t}@{s}" for t, s in self.t2.items()),
            "B1: " + ", ".join(str(t) for t in self.b1),
            "B2: " + ", ".join(str(t) for t in self.b2),
            f"p: {self.p}",
        ]
        return "\n".join(lines)

    def state(self):
        """Hashable snapshot ``(T1, T2, B1, B2, p)`` for trace comparisons."""
        return (tuple(self.t1), tuple(self.t2), tuple(self.b1), tuple(self.b2), self.p)
