"""Per-round client availability: parametric generator and trace files.

A client is *online* in a round when it is connected, idle and powered; it is
*offline-eligible* when idle and powered but not connected.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MINUTES_PER_DAY = 1440


@dataclass(frozen=True)
class AvailabilityProfile:
    p_connected: float = 0.5
    p_idle: float = 0.9
    p_powered: float = 0.9
    diurnal_amplitude: float = 0.0
    # minute of day at which connectivity peaks
    peak_minute: int = 20 * 60
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("p_connected", "p_idle", "p_powered", "diurnal_amplitude"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def connected_probability(self, minute: float) -> float:
        phase = 2.0 * math.pi * ((minute - self.peak_minute) % MINUTES_PER_DAY) / MINUTES_PER_DAY
        p = self.p_connected * (1.0 + self.diurnal_amplitude * math.cos(phase))
        return min(1.0, max(0.0, p))


@dataclass
class AvailabilityTrace:
    """Boolean flag arrays indexed by round (position 0 is round 1)."""

    connected: np.ndarray
    idle: np.ndarray
    powered: np.ndarray

    def __post_init__(self) -> None:
        self.connected = np.asarray(self.connected, dtype=bool)
        self.idle = np.asarray(self.idle, dtype=bool)
        self.powered = np.asarray(self.powered, dtype=bool)
        if not (self.connected.shape == self.idle.shape == self.powered.shape) or self.connected.ndim != 1:
            raise ValueError("trace flags must be equal-length 1-D arrays")

    def __len__(self) -> int:
        return len(self.connected)

    @property
    def online(self) -> np.ndarray:
        return self.connected & self.idle & self.powered

    @property
    def offline_eligible(self) -> np.ndarray:
        return ~self.connected & self.idle & self.powered

    def is_online(self, r: int) -> bool:
        return bool(self.online[r - 1])

    def is_offline_eligible(self, r: int) -> bool:
        return bool(self.offline_eligible[r - 1])

    @classmethod
    def always_on(cls, rounds: int) -> AvailabilityTrace:
        ones = np.ones(rounds, dtype=bool)
        return cls(ones, ones.copy(), ones.copy())


def generate_trace(
    profile: AvailabilityProfile,
    rounds: int,
    round_minutes: int,
    start_minute: int = 0,
) -> AvailabilityTrace:
    """Independent Bernoulli flags per round; connectivity follows a daily cosine."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    rng = np.random.default_rng(profile.seed)
    mid = start_minute + (np.arange(rounds) + 0.5) * round_minutes
    p_conn = np.array([profile.connected_probability(m) for m in mid])
    u = rng.random((rounds, 3))
    return AvailabilityTrace(u[:, 0] < p_conn, u[:, 1] < profile.p_idle, u[:, 2] < profile.p_powered)


def write_trace(trace: AvailabilityTrace, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "connected", "idle", "powered"])
        for i in range(len(trace)):
            w.writerow([i + 1, int(trace.connected[i]), int(trace.idle[i]), int(trace.powered[i])])


def read_trace(path: str | Path, rounds: int | None = None) -> AvailabilityTrace:
    """Load a ``round,connected,idle,powered`` file; every round 1..R must appear once."""
    rows: dict[int, tuple[bool, bool, bool]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or (lineno == 1 and row[0].strip().lower() == "round"):
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields")
            try:
                r, *flags = (int(v) for v in row)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-integer field") from None
            if any(f not in (0, 1) for f in flags):
                raise ValueError(f"{path}:{lineno}: flags must be 0 or 1")
            if r in rows:
                raise ValueError(f"{path}:{lineno}: duplicate round {r}")
            rows[r] = tuple(bool(f) for f in flags)
    n = max(rows, default=0) if rounds is None else rounds
    missing = [r for r in range(1, n + 1) if r not in rows]
    if missing:
        raise ValueError(f"{path}: missing rounds {missing[:5]}")
    flags = np.array([rows[r] for r in range(1, n + 1)], dtype=bool).reshape(n, 3)
    return AvailabilityTrace(flags[:, 0], flags[:, 1], flags[:, 2])
