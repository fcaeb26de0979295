"""Strategy layer: FedAvg, REFL-style, MIFA and FlexFed as flag sets over one round engine.

The baselines are simplified to the mechanism each is known for:

* ``fedavg``: uniform selection among *all* clients; selected clients that turn
  out to be unavailable simply contribute nothing.
* ``refl``: selection restricted to currently available clients (skipping last
  round's picks when the pool allows) plus staleness-scaled aggregation.  REFL's
  resource-priority scoring is not modelled.
* ``mifa``: every client's latest parameter delta is kept server-side and
  replayed while the client is absent, so each aggregation combines exactly
  |K| contributions (zero delta before a client's first participation).
  Aggregation is uniform as in the original algorithm; variance-reduction
  analysis is not modelled.
* ``flexfed``: REFL-style selection and aggregation plus offline sessions with
  stored-model gating and performance-adaptive rare-class retention.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .learner import ModelParams
from .server import UpdateEnvelope, aggregate, select_clients

FLAGS = (
    "offline_training",
    "adaptive_memory",
    "staleness_aggregation",
    "update_store",
    "availability_aware_selection",
)

_PRESETS = {
    "fedavg": {},
    "refl": {"availability_aware_selection": True, "staleness_aggregation": True},
    "mifa": {"update_store": True},
    "flexfed": {
        "offline_training": True,
        "adaptive_memory": True,
        "staleness_aggregation": True,
        "availability_aware_selection": True,
    },
}

STRATEGY_NAMES = tuple(_PRESETS)


@dataclass(frozen=True)
class StrategySpec:
    name: str
    offline_training: bool = False
    adaptive_memory: bool = False
    staleness_aggregation: bool = False
    update_store: bool = False
    availability_aware_selection: bool = False

    @classmethod
    def named(cls, name: str, **overrides: bool) -> StrategySpec:
        if name not in _PRESETS:
            raise ValueError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGY_NAMES)}")
        unknown = set(overrides) - set(FLAGS)
        if unknown:
            raise ValueError(f"unknown strategy flags {sorted(unknown)}")
        spec = cls(name, **{**_PRESETS[name], **overrides})
        spec.validate()
        return spec

    def flags(self) -> dict[str, bool]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "name"}

    def validate(self) -> None:
        if self.name not in _PRESETS:
            raise ValueError(f"unknown strategy {self.name!r}")
        on = [k for k, v in self.flags().items() if v]
        if self.name == "fedavg" and on:
            raise ValueError(f"fedavg takes no feature flags, got {on}")
        if self.update_store and (self.offline_training or self.adaptive_memory):
            raise ValueError("update_store cannot be combined with offline_training or adaptive_memory")
        if self.update_store and self.staleness_aggregation:
            raise ValueError("update_store replays deltas unscaled; disable staleness_aggregation")


@dataclass
class StoredDelta:
    delta: np.ndarray
    round_index: int
    n_samples: int


@dataclass
class UpdateStore:
    """Latest parameter delta per client (at most one entry each)."""

    entries: dict[int, StoredDelta] = field(default_factory=dict)
    writes: int = 0

    def put(self, client_id: int, delta: np.ndarray, round_index: int, n_samples: int) -> None:
        self.entries[client_id] = StoredDelta(delta, round_index, n_samples)
        self.writes += 1


def mifa_aggregate_inputs(
    store: UpdateStore,
    fresh: Sequence[UpdateEnvelope],
    theta_global: ModelParams,
    round_index: int,
    num_clients: int,
) -> list[UpdateEnvelope]:
    """Refresh the store with this round's uploads, then emit one input per client."""
    for u in fresh:
        store.put(u.client_id, u.params.theta - theta_global.theta, round_index, u.n_samples)
    out = []
    for k in range(num_clients):
        entry = store.entries.get(k)
        if entry is None:
            out.append(UpdateEnvelope(k, theta_global.copy(), 0, 1, False))
        else:
            theta = ModelParams(theta_global.theta + entry.delta, theta_global.shape)
            out.append(UpdateEnvelope(k, theta, round_index - entry.round_index, entry.n_samples, False))
    return out


class Strategy:
    """Hook set consumed by :class:`flexfed_sim.server.Server`."""

    def __init__(self, spec: StrategySpec) -> None:
        spec.validate()
        self.spec = spec
        self.store = UpdateStore() if spec.update_store else None

    @property
    def name(self) -> str:
        return self.spec.name

    def select(
        self,
        available: Sequence[int],
        num_clients: int,
        previous: Sequence[int],
        target: int,
        rng: np.random.Generator,
    ) -> list[int]:
        if self.spec.availability_aware_selection:
            return select_clients(available, previous, target, rng)
        k = min(target, num_clients)
        return sorted(int(i) for i in rng.choice(num_clients, size=k, replace=False))

    def aggregation_inputs(
        self,
        uploads: Sequence[UpdateEnvelope],
        theta_global: ModelParams,
        round_index: int,
        num_clients: int,
    ) -> list[UpdateEnvelope]:
        if self.store is not None:
            return mifa_aggregate_inputs(self.store, uploads, theta_global, round_index, num_clients)
        return sorted(uploads, key=lambda u: u.client_id)

    def aggregate(self, inputs: Sequence[UpdateEnvelope], weighting: str) -> ModelParams:
        if self.store is not None:
            weighting = "uniform"
        return aggregate(inputs, weighting, staleness_aware=self.spec.staleness_aggregation)


def make_strategy(spec: StrategySpec | str, **overrides: bool) -> Strategy:
    if isinstance(spec, str):
        spec = StrategySpec.named(spec, **overrides)
    elif overrides:
        spec = replace(spec, **overrides)
    return Strategy(spec)
