"""Experiment configuration: schema, validation, file loading."""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .strategies import FLAGS, STRATEGY_NAMES

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


@dataclass
class AvailabilityConfig:
    p_connected: float = 0.5
    p_idle: float = 0.9
    p_powered: float = 0.9
    diurnal_amplitude: float = 0.3
    peak_minute: int = 20 * 60
    # per-client spread of p_connected around the base value
    heterogeneity: float = 0.0
    trace_dir: str | None = None


@dataclass
class OfflineConfig:
    max_sessions: int = 1
    compute_budget: int | None = None


@dataclass
class SweepConfig:
    strategies: list[str] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)


@dataclass
class ExperimentConfig:
    schema: int = SCHEMA_VERSION
    name: str = "experiment"
    description: str = ""
    strategy: str = "flexfed"
    strategy_flags: dict[str, bool] = field(default_factory=dict)
    num_clients: int = 20
    rounds: int = 60
    tau: float = 0.25
    beta: float = 0.3
    round_minutes: int = 300
    start_minute: int = 7 * 60
    memory: int = 200
    infrequent_threshold: float | None = None
    refresh_alpha_offline: bool = False
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.005
    hidden: int = 16
    window_len: int = 4
    stride: int = 2
    channels: int = 3
    feature_separation: float = 1.0
    feature_noise: float = 1.0
    weighting: str = "samples"
    compare_metric: str = "overall"
    client_groups: list[str] = field(default_factory=lambda: ["employee", "student", "elderly", "athlete"])
    templates: dict[str, list[list]] = field(default_factory=dict)
    mix: dict[str, list[float]] = field(default_factory=dict)
    availability: AvailabilityConfig = field(default_factory=AvailabilityConfig)
    offline: OfflineConfig = field(default_factory=OfflineConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seed: int = 0
    output_dir: str = "runs"

    @property
    def input_dim(self) -> int:
        return self.window_len * self.channels

    def validate(self, base_dir: Path | None = None) -> None:
        def need(cond: bool, fname: str, msg: str) -> None:
            if not cond:
                raise ConfigError(f"{fname}: {msg}")

        need(self.schema == SCHEMA_VERSION, "schema", f"unsupported version {self.schema}, expected {SCHEMA_VERSION}")
        need(self.strategy in STRATEGY_NAMES, "strategy", f"must be one of {', '.join(STRATEGY_NAMES)}")
        bad = set(self.strategy_flags) - set(FLAGS)
        need(not bad, "strategy_flags", f"unknown flags {sorted(bad)}")
        for fname in ("num_clients", "rounds", "round_minutes", "epochs", "batch_size", "hidden", "window_len", "stride", "channels"):
            need(int(getattr(self, fname)) >= 1, fname, "must be >= 1")
        need(self.memory >= 0, "memory", "must be >= 0")
        need(0.0 < self.tau <= 1.0, "tau", "must lie in (0, 1]")
        need(0.0 <= self.beta <= 1.0, "beta", "must lie in [0, 1]")
        need(self.lr >= 0, "lr", "must be >= 0")
        need(self.start_minute >= 0, "start_minute", "must be >= 0")
        need(self.feature_noise > 0, "feature_noise", "must be > 0")
        need(self.weighting in ("samples", "uniform"), "weighting", "must be 'samples' or 'uniform'")
        need(self.compare_metric in ("overall", "macro"), "compare_metric", "must be 'overall' or 'macro'")
        need(len(self.client_groups) >= 1, "client_groups", "needs at least one group")
        if self.infrequent_threshold is not None:
            need(0.0 < self.infrequent_threshold <= 1.0, "infrequent_threshold", "must lie in (0, 1]")
        a = self.availability
        for fname in ("p_connected", "p_idle", "p_powered", "diurnal_amplitude", "heterogeneity"):
            need(0.0 <= getattr(a, fname) <= 1.0, f"availability.{fname}", "must lie in [0, 1]")
        if a.trace_dir is not None:
            p = Path(a.trace_dir)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            need(p.is_dir(), "availability.trace_dir", f"directory {p} does not exist")
            a.trace_dir = str(p)
        need(self.offline.max_sessions >= 0, "offline.max_sessions", "must be >= 0")
        for s in self.sweep.strategies:
            need(s in STRATEGY_NAMES, "sweep.strategies", f"unknown strategy {s!r}")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def single_runs(self) -> list[ExperimentConfig]:
        """Expand the sweep table into one config per (strategy, seed)."""
        strategies = self.sweep.strategies or [self.strategy]
        seeds = self.sweep.seeds or [self.seed]
        out = []
        for s in strategies:
            for seed in seeds:
                c = dataclasses.replace(self, strategy=s, seed=seed, sweep=SweepConfig())
                c.strategy_flags = dict(self.strategy_flags) if s == self.strategy else {}
                out.append(c)
        return out


_NESTED = {"availability": AvailabilityConfig, "offline": OfflineConfig, "sweep": SweepConfig}


def from_dict(data: dict[str, Any], base_dir: Path | None = None) -> ExperimentConfig:
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in _NESTED:
            cls = _NESTED[key]
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected a table")
            sub_known = {f.name for f in dataclasses.fields(cls)}
            bad = sorted(set(value) - sub_known)
            if bad:
                raise ConfigError(f"{key}.{bad[0]}: unknown key")
            kwargs[key] = cls(**value)
        else:
            kwargs[key] = value
    try:
        cfg = ExperimentConfig(**kwargs)
    except TypeError as exc:  # pragma: no cover - guarded by the key check above
        raise ConfigError(str(exc)) from None
    _check_types(cfg)
    cfg.validate(base_dir)
    return cfg


def _check_types(cfg: ExperimentConfig) -> None:
    defaults = ExperimentConfig()
    for f in dataclasses.fields(cfg):
        val, ref = getattr(cfg, f.name), getattr(defaults, f.name)
        if ref is None or val is None:
            continue
        if isinstance(ref, bool) or isinstance(val, bool):
            ok = isinstance(val, bool) == isinstance(ref, bool)
        elif isinstance(ref, float):
            ok = isinstance(val, (int, float))
        elif isinstance(ref, int):
            ok = isinstance(val, int)
        else:
            ok = isinstance(val, type(ref))
        if not ok:
            raise ConfigError(f"{f.name}: expected {type(ref).__name__}, got {type(val).__name__}")


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config: file {path} does not exist")
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"config: cannot parse {path}: {exc}") from None
    return from_dict(data, base_dir=path.parent)
