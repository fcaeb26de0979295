"""Bounded per-client sample store.

A :class:`MemoryBuffer` holds at most ``capacity`` windows split between a FIFO
region (newest last) and a retention region that only keeps samples of the
client's infrequent classes.  The retention budget is ``round(m * (1 - alpha))``
so clients whose global model performs poorly keep more old rare-class data.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import NUM_CLASSES


def retention_budget(capacity: int, alpha: float) -> int:
    """``round(m * (1 - alpha))`` with halves rounded up."""
    # the epsilon absorbs float noise such as 100 * (1 - 0.8) = 19.999999999999996
    return int(math.floor(capacity * (1.0 - alpha) + 0.5 + 1e-9))


def infer_infrequent_classes(label_counts: Sequence[float], threshold: float | None = None) -> frozenset[int]:
    """Classes whose share of ``label_counts`` is strictly below ``threshold`` (default 1/|C|)."""
    counts = np.asarray(label_counts, dtype=float)
    if np.any(counts < 0):
        raise ValueError("label counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise ValueError("label counts are all zero")
    tau = 1.0 / len(counts) if threshold is None else threshold
    return frozenset(int(c) for c in np.flatnonzero(counts / total < tau))


@dataclass
class MemoryBuffer:
    capacity: int
    num_classes: int = NUM_CLASSES
    alpha: float = 1.0
    fifo: deque = field(default_factory=deque)
    retained: dict[int, list] = field(default_factory=dict)
    # reservoir bookkeeping: C' candidates offered per class
    offered: dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.capacity < 0:
            raise ValueError("capacity must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        self.retained_budget = retention_budget(self.capacity, self.alpha)

    def __len__(self) -> int:
        return len(self.fifo) + self.retained_size

    @property
    def retained_size(self) -> int:
        return sum(len(v) for v in self.retained.values())

    def _evict_retained_one(self) -> None:
        # most-populated class first, lowest class index on ties; oldest sample
        c = max(sorted(self.retained), key=lambda k: len(self.retained[k]))
        self.retained[c].pop(0)
        if not self.retained[c]:
            del self.retained[c]

    def _overflow(self) -> list:
        evicted = []
        while len(self) > self.capacity:
            if self.fifo:
                evicted.append(self.fifo.popleft())
            else:
                self._evict_retained_one()
        return evicted

    def push(self, w) -> list:
        """Append ``w`` to the FIFO region and return the samples evicted from it."""
        self.fifo.append(w)
        return self._overflow()

    def set_alpha(self, alpha: float) -> None:
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        self.alpha = float(alpha)
        self.retained_budget = retention_budget(self.capacity, self.alpha)
        while self.retained_size > self.retained_budget:
            self._evict_retained_one()

    def quotas(self, infrequent: Iterable[int], rarity: Sequence[float] | None = None) -> dict[int, int]:
        """Equal per-class split of the budget; the remainder goes to rarer classes first."""
        classes = sorted(infrequent)
        if not classes:
            return {}
        base, rem = divmod(self.retained_budget, len(classes))
        if rarity is None:
            order = classes
        else:
            order = sorted(classes, key=lambda c: (rarity[c], c))
        out = {c: base for c in classes}
        for c in order[:rem]:
            out[c] += 1
        return out

    def retain_infrequent(
        self,
        candidates: Iterable,
        infrequent: Iterable[int],
        rng: np.random.Generator,
        rarity: Sequence[float] | None = None,
    ) -> None:
        """Offer samples leaving the FIFO region to the retention region.

        Only labels in ``infrequent`` are considered.  Each class fills up to its
        quota by per-class reservoir sampling; free budget left by under-filled
        classes may be borrowed and is reclaimed when the owner class shows up.
        Room made for a retained sample pushes the oldest FIFO samples out, and
        those are offered in turn.
        """
        cset = frozenset(infrequent)
        self.restrict(cset)
        if self.retained_budget == 0 or not cset:
            return
        quotas = self.quotas(cset, rarity)
        queue = deque(candidates)
        while queue:
            w = queue.popleft()
            c = w.label
            if c not in cset:
                continue
            seen = self.offered.get(c, 0) + 1
            self.offered[c] = seen
            bucket = self.retained.setdefault(c, [])
            if self.retained_size < self.retained_budget:
                bucket.append(w)
            elif len(bucket) < quotas[c]:
                # reclaim a slot from the class furthest over its quota
                donor = max(
                    sorted(k for k in self.retained if k != c),
                    key=lambda k: len(self.retained[k]) - quotas.get(k, 0),
                )
                self.retained[donor].pop(0)
                if not self.retained[donor]:
                    del self.retained[donor]
                bucket.append(w)
            else:
                j = int(rng.integers(0, seen))
                if j < len(bucket):
                    bucket.pop(j)
                    bucket.append(w)
            if not bucket:
                del self.retained[c]
            queue.extend(self._overflow())

    def restrict(self, infrequent: Iterable[int]) -> None:
        """Drop retained samples of classes that are no longer infrequent."""
        keep = frozenset(infrequent)
        for c in [k for k in self.retained if k not in keep]:
            del self.retained[c]

    def training_set(self) -> list:
        out = list(self.fifo)
        for c in sorted(self.retained):
            out.extend(self.retained[c])
        return out

    def snapshot(self) -> dict:
        fifo_counts = [0] * self.num_classes
        for w in self.fifo:
            fifo_counts[w.label] += 1
        kept = [len(self.retained.get(c, ())) for c in range(self.num_classes)]
        return {"fifo": fifo_counts, "retained": kept, "budget": self.retained_budget}
