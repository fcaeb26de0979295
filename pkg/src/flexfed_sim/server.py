"""Round lifecycle: quorum, selection, distribution, staleness-scaled aggregation, metrics."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .learner import EvalReport, ModelParams, NoTrainableData, TrainConfig, mean_loss
from .metrics import AccuracyHistory, PriorTaskMonitor, cf_flag, forgetting_round
from .seeding import derive_seed

log = logging.getLogger(__name__)


@dataclass
class UpdateEnvelope:
    client_id: int
    params: ModelParams
    staleness: int = 0
    n_samples: int = 1
    fresh_model: bool = True

    def __post_init__(self) -> None:
        if self.staleness < 0 or self.n_samples < 1:
            raise ValueError("staleness must be >= 0 and n_samples >= 1")


@dataclass(frozen=True)
class RoundPlan:
    round_index: int
    beta: float
    tau: float
    round_minutes: int
    start_minute: int = 0

    @property
    def end_minute(self) -> int:
        return self.start_minute + self.round_index * self.round_minutes


@dataclass
class RoundRecord:
    round: int
    cancelled: bool
    selected: list[int]
    participants: int
    staleness: list[int]
    overall_accuracy: float
    per_class_accuracy: list[float]
    forgetting: float
    per_class_forgetting: list[float]
    mean_loss: float
    errors: list[str] = field(default_factory=list)
    wall_ms: float = 0.0
    diagnostics: dict = field(default_factory=dict)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def selection_target(tau: float, num_clients: int) -> int:
    return max(1, round_half_up(tau * num_clients))


def check_quorum(available: int, num_clients: int, beta: float) -> bool:
    """Proceed iff ``available / num_clients >= beta``."""
    if num_clients <= 0:
        return False
    return available * 1.0 >= beta * num_clients - 1e-12 * num_clients


def select_clients(
    available: Sequence[int],
    previous: Sequence[int],
    target: int,
    rng: np.random.Generator,
) -> list[int]:
    """Sample ``target`` available clients, skipping last round's picks when possible."""
    avail = sorted(set(available))
    if not avail:
        raise ValueError("no available clients to select from")
    prev = set(previous)
    pool = [k for k in avail if k not in prev]
    fallback = [k for k in avail if k in prev]
    if len(pool) >= target:
        picked = rng.choice(pool, size=target, replace=False).tolist()
    else:
        need = min(target - len(pool), len(fallback))
        extra = rng.choice(fallback, size=need, replace=False).tolist() if need else []
        picked = pool + extra
    return sorted(int(k) for k in picked)


def staleness_scale(s: int) -> float:
    return 1.0 / (1.0 + s)


def aggregate(
    updates: Sequence[UpdateEnvelope],
    weighting: str = "samples",
    staleness_aware: bool = True,
) -> ModelParams:
    """Normalized weighted average ``sum w_k g_k theta_k / sum w_k g_k``.

    ``w_k`` is the sample count (``"samples"``) or 1 (``"uniform"``); ``g_k`` is
    ``1/(1+staleness)`` when ``staleness_aware`` else 1.
    """
    if not updates:
        raise ValueError("cannot aggregate an empty update list")
    if weighting not in ("samples", "uniform"):
        raise ValueError(f"unknown weighting {weighting!r}")
    ups = sorted(updates, key=lambda u: u.client_id)
    for u in ups:
        if not u.params.is_finite():
            raise ValueError(f"client {u.client_id} sent non-finite parameters")
    shape = ups[0].params.shape
    w = np.array(
        [
            (u.n_samples if weighting == "samples" else 1.0) * (staleness_scale(u.staleness) if staleness_aware else 1.0)
            for u in ups
        ]
    )
    stacked = np.stack([u.params.theta for u in ups])
    return ModelParams((w @ stacked) / w.sum(), shape)


class Server:
    """Owns the global model, the clients and the metric history of one run."""

    def __init__(
        self,
        clients: Sequence,
        theta0: ModelParams,
        strategy,
        train_cfg: TrainConfig,
        beta: float,
        tau: float,
        round_minutes: int,
        start_minute: int = 0,
        weighting: str = "samples",
        offline_policy=None,
        seed: int = 0,
        track_prior_tasks: bool = True,
    ) -> None:
        self.clients = list(clients)
        if [c.id for c in self.clients] != list(range(len(self.clients))):
            raise ValueError("client ids must be 0..K-1 in order")
        self.theta = theta0.copy()
        self.strategy = strategy
        self.train_cfg = train_cfg
        self.beta = beta
        self.tau = tau
        self.round_minutes = round_minutes
        self.start_minute = start_minute
        self.weighting = weighting
        self.offline_policy = offline_policy
        self.seed = seed
        self.previous: list[int] = []
        self.round_index = 0
        num_classes = theta0.shape.classes
        self.history = AccuracyHistory(len(self.clients), num_classes)
        self.reports = self._evaluate_all(self.theta)
        self.records: list[RoundRecord] = []
        self.prior_tasks = PriorTaskMonitor() if track_prior_tasks else None
        self._prior_losses = np.empty(0)

    @property
    def num_clients(self) -> int:
        return len(self.clients)

    def _evaluate_all(self, p: ModelParams) -> list[EvalReport]:
        return [c.evaluate(p) for c in self.clients]

    def plan(self) -> RoundPlan:
        return RoundPlan(self.round_index + 1, self.beta, self.tau, self.round_minutes, self.start_minute)

    def _train_cfg(self, client_id: int, r: int) -> TrainConfig:
        cfg = self.train_cfg
        return TrainConfig(cfg.epochs, cfg.batch_size, cfg.lr, derive_seed(self.seed, "train", client_id, r))

    def run_round(self) -> RoundRecord:
        t0 = time.perf_counter()
        plan = self.plan()
        r = plan.round_index
        strat = self.strategy
        errors: list[str] = []

        # (1) streaming
        arrivals = []
        for c in self.clients:
            before = c.cursor
            c.advance_stream(plan.end_minute)
            arrivals.append(c.stream[before : c.cursor])

        # (2) quorum
        available = [c.id for c in self.clients if c.trace.is_online(r)]
        proceed = check_quorum(len(available), self.num_clients, self.beta)

        selected: list[int] = []
        uploads: list[UpdateEnvelope] = []
        if proceed:
            # (3) selection
            rng = np.random.default_rng(derive_seed(self.seed, "select", r))
            target = selection_target(self.tau, self.num_clients)
            selected = strat.select(available, self.num_clients, self.previous, target, rng)
            # (4) distribution and local training
            online = set(available)
            for k in selected:
                if k not in online:
                    continue
                c = self.clients[k]
                if strat.spec.adaptive_memory:
                    c.update_alpha(self.theta, accuracy=self.reports[k].overall_accuracy)
                try:
                    up = c.participate(self.theta, self._train_cfg(k, r), r)
                except NoTrainableData as exc:
                    errors.append(str(exc))
                    continue
                uploads.append(UpdateEnvelope(up.client_id, up.params, up.staleness, up.n_samples, up.fresh_model))

        # (5) offline sessions for eligible clients that were not selected
        offline_sessions = 0
        if strat.spec.offline_training:
            chosen = set(selected)
            for c in self.clients:
                if c.id in chosen or not c.trace.is_offline_eligible(r):
                    continue
                n = c.plan_offline_sessions(r, self.offline_policy)
                if n > 0:
                    c.offline_train(self._train_cfg(c.id, r), n, r)
                    offline_sessions += n

        # (6) aggregation
        prev_theta = self.theta
        inputs: list[UpdateEnvelope] = []
        if proceed:
            inputs = strat.aggregation_inputs(uploads, self.theta, r, self.num_clients)
            if inputs:
                try:
                    self.theta = strat.aggregate(inputs, self.weighting)
                except ValueError as exc:
                    errors.append(str(exc))
                    log.warning("round %d aggregation failed: %s", r, exc)
            self.previous = selected

        # (7) metrics
        changed = self.theta is not prev_theta
        if changed:
            self.reports = self._evaluate_all(self.theta)
        rec = self._record(r, not proceed, selected, uploads, inputs, errors, prev_theta, changed, arrivals)
        rec.diagnostics["offline_sessions"] = offline_sessions
        rec.wall_ms = (time.perf_counter() - t0) * 1000.0
        self.round_index = r
        self.records.append(rec)
        return rec

    def _record(self, r, cancelled, selected, uploads, inputs, errors, prev_theta, changed, arrivals) -> RoundRecord:
        per_class = np.stack([rep.per_class_accuracy for rep in self.reports])
        self.history.record(r, per_class)
        f, f_c = forgetting_round(self.history, r)
        diag: dict = {}
        cf = 0
        if changed:
            for c in self.clients:
                x, y = c.training_arrays()
                if len(y) and cf_flag(mean_loss(prev_theta, x, y), mean_loss(self.theta, x, y)):
                    cf += 1
        diag["cf_clients"] = cf
        if self.prior_tasks is not None:
            mon = self.prior_tasks
            loss_fn = lambda x, y: mean_loss(self.theta, x, y)  # noqa: E731
            new = mon.task_losses(loss_fn) if changed else self._prior_losses
            diag["prior_loss_prev"] = float(self._prior_losses.sum())
            diag["prior_loss_new"] = float(new.sum())
            diag["prior_violation"] = mon.check(self._prior_losses, new)
            task = [w for batch in arrivals for w in batch]
            if task:
                x = np.stack([w.features for w in task])
                y = np.array([w.label for w in task])
                mon.add_task(x, y)
                new = np.append(new, loss_fn(x, y))
            self._prior_losses = new
        overall = float(np.mean([rep.overall_accuracy for rep in self.reports]))
        loss = float(np.mean([rep.mean_loss for rep in self.reports]))
        return RoundRecord(
            round=r,
            cancelled=cancelled,
            selected=list(selected),
            participants=len(uploads),
            staleness=[u.staleness for u in inputs],
            overall_accuracy=overall,
            per_class_accuracy=np.nanmean(per_class, axis=0).tolist(),
            forgetting=f,
            per_class_forgetting=f_c.tolist(),
            mean_loss=loss,
            errors=errors,
            diagnostics=diag,
        )

    def run(self, rounds: int) -> list[RoundRecord]:
        for _ in range(rounds):
            self.run_round()
        return self.records
