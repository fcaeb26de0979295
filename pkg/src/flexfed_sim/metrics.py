"""Accuracy history and forgetting measures.

``forgetting_round`` averages only the drops of each (client, class) accuracy
below its running maximum, first over clients and then over classes, so gains
in one class cannot hide losses in another.  ``bwt_final`` is the classic backward-transfer
style measure on client-averaged per-class accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .learner import EvalReport


@dataclass
class AccuracyHistory:
    num_clients: int
    num_classes: int
    rounds: list[int] = field(default_factory=list)
    acc: list[np.ndarray] = field(default_factory=list)
    running_max: list[np.ndarray] = field(default_factory=list)

    def __contains__(self, r: int) -> bool:
        return r in self._index

    def __post_init__(self) -> None:
        self._index: dict[int, int] = {}

    def record(self, r: int, per_class: np.ndarray) -> None:
        """Store a ``(clients, classes)`` accuracy matrix for round ``r`` (NaN = class absent)."""
        if r in self._index:
            raise ValueError(f"round {r} already recorded")
        if self.rounds and r < self.rounds[-1]:
            raise ValueError(f"round {r} recorded after round {self.rounds[-1]}")
        a = np.array(per_class, dtype=float)
        if a.shape != (self.num_clients, self.num_classes):
            raise ValueError(f"expected shape {(self.num_clients, self.num_classes)}, got {a.shape}")
        if np.any((a < 0) | (a > 1)):
            raise ValueError("accuracies must lie in [0, 1]")
        prev = self.running_max[-1] if self.running_max else np.full_like(a, np.nan)
        rmax = np.fmax(prev, a)
        self._index[r] = len(self.rounds)
        self.rounds.append(r)
        self.acc.append(a)
        self.running_max.append(rmax)

    def at(self, r: int) -> tuple[np.ndarray, np.ndarray]:
        try:
            i = self._index[r]
        except KeyError:
            raise KeyError(f"round {r} has not been recorded") from None
        return self.acc[i], self.running_max[i]

    def global_per_class(self) -> np.ndarray:
        """``(rounds, classes)`` client-averaged accuracy."""
        return np.array([np.nanmean(a, axis=0) for a in self.acc])


def record_round(h: AccuracyHistory, r: int, reports: Mapping[int, EvalReport]) -> None:
    """Record one :class:`EvalReport` per client (keys are client indices 0..K-1)."""
    if sorted(reports) != list(range(h.num_clients)):
        raise ValueError("need exactly one report per client")
    h.record(r, np.stack([reports[k].per_class_accuracy for k in range(h.num_clients)]))


def forgetting_round(h: AccuracyHistory, r: int) -> tuple[float, np.ndarray]:
    """Signed forgetting (<= 0) for round ``r`` and its per-class breakdown."""
    acc, rmax = h.at(r)
    drop = np.minimum(0.0, acc - rmax)
    with np.errstate(invalid="ignore"):
        per_class = _nanmean0(drop)
    present = ~np.isnan(per_class)
    total = float(per_class[present].mean()) if present.any() else 0.0
    return total, per_class


def _nanmean0(a: np.ndarray) -> np.ndarray:
    counts = np.sum(~np.isnan(a), axis=0)
    sums = np.nansum(a, axis=0)
    out = np.full(a.shape[1], np.nan)
    np.divide(sums, counts, out=out, where=counts > 0)
    return out


def bwt_final(global_acc: np.ndarray) -> tuple[float, np.ndarray]:
    """Backward-transfer forgetting from a ``(rounds, classes)`` accuracy trajectory.

    Per class: ``max over r < R of (acc_r - acc_R)``; the result averages classes.
    This can be negative when the last round beats every earlier one.
    """
    g = np.asarray(global_acc, dtype=float)
    if g.ndim != 2 or g.shape[0] < 2:
        raise ValueError("need at least two recorded rounds")
    per_class = np.max(g[:-1] - g[-1], axis=0)
    present = ~np.isnan(per_class)
    return float(per_class[present].mean()), per_class


def cf_flag(prev_loss: float, new_loss: float) -> bool:
    """True when the loss on the same client data strictly increased."""
    if not (np.isfinite(prev_loss) and np.isfinite(new_loss)):
        raise ValueError("losses must be finite")
    return bool(new_loss > prev_loss)


@dataclass
class PriorTaskMonitor:
    """Tracks the summed loss of the global model over all earlier per-round tasks.

    A round violates the non-increase goal when that sum under the new model
    exceeds the sum under the previous model.  Violations are only counted.
    """

    xs: list[np.ndarray] = field(default_factory=list)
    ys: list[np.ndarray] = field(default_factory=list)
    rounds: int = 0
    violations: int = 0

    def add_task(self, x: np.ndarray, y: np.ndarray) -> None:
        self.xs.append(x)
        self.ys.append(y)

    def task_losses(self, loss_fn) -> np.ndarray:
        return np.array([loss_fn(x, y) for x, y in zip(self.xs, self.ys)])

    def check(self, prev_losses: np.ndarray, new_losses: np.ndarray) -> bool:
        if len(prev_losses) == 0:
            return False
        self.rounds += 1
        bad = bool(new_losses.sum() > prev_losses.sum())
        self.violations += bad
        return bad

    @property
    def violation_fraction(self) -> float:
        return self.violations / self.rounds if self.rounds else 0.0
