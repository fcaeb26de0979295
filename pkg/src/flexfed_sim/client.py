"""Per-client runtime: streaming ingestion, participation, offline sessions and alpha updates."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import NUM_CLASSES
from .availability import AvailabilityTrace
from .learner import (
    EvalReport,
    ModelParams,
    NoTrainableData,
    TrainConfig,
    as_arrays,
    evaluate_arrays,
    local_train_arrays,
)
from .memory import MemoryBuffer, infer_infrequent_classes
from .seeding import derive_seed


class SchedulingError(RuntimeError):
    """A client operation was invoked in a state that forbids it."""


@dataclass(frozen=True)
class OfflinePolicy:
    """Offline sessions per eligible round, clamped so that
    ``sessions * |training set| <= compute_budget`` when a budget is set."""

    max_sessions: int = 1
    compute_budget: int | None = None


@dataclass
class Upload:
    client_id: int
    params: ModelParams
    staleness: int
    n_samples: int
    fresh_model: bool


@dataclass
class Client:
    id: int
    buffer: MemoryBuffer
    test_set: Sequence
    trace: AvailabilityTrace
    stream: Sequence
    theta_stored: ModelParams
    window_len: int = 1
    adaptive_memory: bool = False
    gate_uploads: bool = False
    compare_metric: str = "overall"
    infrequent_threshold: float | None = None
    # when set, alpha is also refreshed from the stored model after offline sessions
    refresh_alpha_offline: bool = False
    seed: int = 0
    alpha: float = 1.0
    cursor: int = 0
    stored_round: int = 0
    label_counts: np.ndarray = field(default_factory=lambda: np.zeros(NUM_CLASSES, dtype=np.int64))
    # instrumentation
    offline_calls: int = 0
    offline_sessions: int = 0
    alpha_updates: int = 0
    stored_history: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.compare_metric not in ("overall", "macro"):
            raise ValueError(f"unknown compare_metric {self.compare_metric!r}")
        self.x_test, self.y_test = as_arrays(self.test_set)
        self.alpha = self.buffer.alpha
        self._retain_rng = np.random.default_rng(derive_seed(self.seed, "retain", self.id))
        self.stored_score = self.score(self.theta_stored)
        self.stored_history.append(self.stored_score)

    # -- evaluation ------------------------------------------------------------------

    def evaluate(self, p: ModelParams) -> EvalReport:
        return evaluate_arrays(p, self.x_test, self.y_test)

    def score(self, p: ModelParams) -> float:
        rep = self.evaluate(p)
        return rep.overall_accuracy if self.compare_metric == "overall" else rep.macro_accuracy

    def training_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return as_arrays(self.buffer.training_set())

    @property
    def infrequent_classes(self) -> frozenset[int]:
        if self.label_counts.sum() == 0:
            return frozenset()
        return infer_infrequent_classes(self.label_counts, self.infrequent_threshold)

    # -- streaming -------------------------------------------------------------------

    def advance_stream(self, until_minute: int) -> int:
        """Push every window completed before ``until_minute``; returns how many arrived."""
        start = self.cursor
        n = len(self.stream)
        while self.cursor < n and self.stream[self.cursor].t + self.window_len <= until_minute:
            self.cursor += 1
        new = self.stream[start : self.cursor]
        if not new:
            return 0
        for w in new:
            self.label_counts[w.label] += 1
        cprime = self.infrequent_classes if self.adaptive_memory else frozenset()
        for w in new:
            evicted = self.buffer.push(w)
            if evicted and cprime:
                self.buffer.retain_infrequent(evicted, cprime, self._retain_rng, rarity=self.label_counts)
        return len(new)

    # -- server-facing ---------------------------------------------------------------

    def update_alpha(self, theta_global: ModelParams, accuracy: float | None = None) -> None:
        """alpha := accuracy of the received global model on the local test set."""
        acc = self.evaluate(theta_global).overall_accuracy if accuracy is None else accuracy
        self.alpha = float(acc)
        self.buffer.set_alpha(self.alpha)
        self.alpha_updates += 1

    def participate(self, theta_global: ModelParams, cfg: TrainConfig, round_index: int) -> Upload:
        """Train from the global model; with gating, upload whichever of the new and
        stored models scores higher on the local test set (ties favour the new one)."""
        x, y = self.training_arrays()
        if len(y) == 0:
            raise NoTrainableData(f"client {self.id} has no trainable data in round {round_index}")
        trained = local_train_arrays(theta_global, x, y, cfg)
        if not self.gate_uploads:
            return Upload(self.id, trained, 0, len(y), True)
        new_score = self.score(trained)
        if new_score >= self.stored_score:
            self._store(trained, new_score, round_index)
            return Upload(self.id, trained, 0, len(y), True)
        return Upload(self.id, self.theta_stored.copy(), round_index - self.stored_round, len(y), False)

    def _store(self, p: ModelParams, score: float, round_index: int | None = None) -> None:
        self.theta_stored = p
        self.stored_score = score
        if round_index is not None:
            self.stored_round = round_index
        self.stored_history.append(score)

    # -- offline ---------------------------------------------------------------------

    def plan_offline_sessions(self, round_index: int, policy: OfflinePolicy) -> int:
        if not self.trace.is_offline_eligible(round_index):
            return 0
        size = len(self.buffer)
        if size == 0:
            return 0
        n = policy.max_sessions
        if policy.compute_budget is not None:
            n = min(n, policy.compute_budget // size)
        return max(0, n)

    def offline_train(self, cfg: TrainConfig, sessions: int, round_index: int) -> None:
        """Refine the stored model locally; keep a session's result only if it does not score lower."""
        if not self.trace.is_offline_eligible(round_index):
            raise SchedulingError(
                f"client {self.id} is not offline-eligible in round {round_index} (must be idle, powered, disconnected)"
            )
        if sessions < 1:
            raise ValueError("sessions must be >= 1")
        self.offline_calls += 1
        x, y = self.training_arrays()
        if len(y) == 0:
            return
        for _ in range(sessions):
            seed = derive_seed(cfg.seed, "offline", self.id, self.offline_sessions)
            self.offline_sessions += 1
            candidate = local_train_arrays(self.theta_stored, x, y, replace(cfg, seed=seed))
            score = self.score(candidate)
            if score >= self.stored_score:
                self._store(candidate, score)
        if self.refresh_alpha_offline and self.adaptive_memory:
            self.update_alpha(self.theta_stored)
