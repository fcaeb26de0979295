"""Synthetic human-activity streams built from daily schedule templates.

Pipeline: a :class:`ScheduleTemplate` is sampled into a concrete day schedule, the
schedule is converted into a minute-resolution label timeline through an
:class:`ActivityMixTable`, and the timeline is cut into fixed-length
:class:`LabeledWindow` segments whose features come from a per-class Gaussian
model (:class:`ClassFeatureModel`).  WISDM-format raw files can be ingested
instead of synthetic features.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import LABELS, NUM_CLASSES

MINUTES_PER_DAY = 1440
GAP = -1

_LABEL_INDEX = {name.lower(): i for i, name in enumerate(LABELS)}
# WISDM raw files spell the stair classes this way
_LABEL_INDEX.update({"walking upstairs": 4, "walking downstairs": 5})


def label_index(name: str) -> int:
    try:
        return _LABEL_INDEX[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown class name {name!r}") from None


@dataclass(frozen=True)
class ScheduleEntry:
    activity: str
    start: int
    start_variance: int
    duration: int
    duration_variance: int


@dataclass(frozen=True)
class ScheduledActivity:
    activity: str
    start: int
    duration: int

    @property
    def end(self) -> int:
        return self.start + self.duration


@dataclass
class ScheduleTemplate:
    group_name: str
    entries: list[ScheduleEntry]

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        prev = -1
        for e in self.entries:
            if e.duration <= 0:
                raise ValueError(f"{self.group_name}/{e.activity}: duration must be positive")
            if e.start_variance < 0 or e.duration_variance < 0:
                raise ValueError(f"{self.group_name}/{e.activity}: variances must be >= 0")
            if e.duration - e.duration_variance < 1:
                raise ValueError(
                    f"{self.group_name}/{e.activity}: duration variance allows durations below 1 minute"
                )
            if not 0 <= e.start < MINUTES_PER_DAY or e.start + e.duration > MINUTES_PER_DAY:
                raise ValueError(f"{self.group_name}/{e.activity}: entry does not fit in one day")
            if e.start < prev:
                raise ValueError(f"{self.group_name}: entries must be sorted by start time")
            prev = e.start

    @property
    def activities(self) -> set[str]:
        return {e.activity for e in self.entries}

    def without_variance(self) -> ScheduleTemplate:
        return ScheduleTemplate(
            self.group_name,
            [ScheduleEntry(e.activity, e.start, 0, e.duration, 0) for e in self.entries],
        )

    @classmethod
    def from_rows(cls, group_name: str, rows: Iterable[Sequence]) -> ScheduleTemplate:
        """Build from ``(activity, start, start_var, duration, duration_var)`` rows.

        Times may be integers (minutes) or ``"H:MM"`` strings.
        """
        entries = [
            ScheduleEntry(str(a), parse_minutes(s), parse_minutes(sv), parse_minutes(d), parse_minutes(dv))
            for a, s, sv, d, dv in rows
        ]
        return cls(group_name, entries)


def parse_minutes(value: int | str) -> int:
    if isinstance(value, (int, np.integer)):
        return int(value)
    text = str(value).strip().lower()
    pm = text.endswith("pm")
    text = text.removesuffix("am").removesuffix("pm").strip()
    if ":" in text:
        h, m = text.split(":")
        hours, minutes = int(h), int(m)
    else:
        hours, minutes = 0, int(text)
    if pm and hours < 12:
        hours += 12
    return hours * 60 + minutes


@dataclass
class ActivityMixTable:
    """Activity name -> weight vector over the six labels (rows sum to 1)."""

    rows: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        for name, w in self.rows.items():
            w = np.asarray(w, dtype=float)
            if w.shape != (NUM_CLASSES,) or np.any(w < 0):
                raise ValueError(f"mix row {name!r} must be {NUM_CLASSES} non-negative weights")
            if abs(w.sum() - 1.0) > 1e-9:
                raise ValueError(f"mix row {name!r} sums to {w.sum()}, expected 1")
            self.rows[name] = w

    @classmethod
    def from_weights(cls, rows: Mapping[str, Sequence[float]], renormalize: bool = True) -> ActivityMixTable:
        out = {}
        for name, w in rows.items():
            w = np.asarray(w, dtype=float)
            if renormalize:
                total = w.sum()
                if total <= 0:
                    raise ValueError(f"mix row {name!r} has no positive weight")
                w = w / total
            out[name] = w
        return cls(out)

    def row(self, activity: str) -> np.ndarray:
        try:
            return self.rows[activity]
        except KeyError:
            raise KeyError(f"activity {activity!r} has no row in the mix table") from None

    def check_covers(self, templates: Iterable[ScheduleTemplate]) -> None:
        for tpl in templates:
            missing = tpl.activities - self.rows.keys()
            if missing:
                raise ValueError(f"template {tpl.group_name!r} uses unknown activities {sorted(missing)}")


# Sitting, Standing, Walking, Jogging, Upstairs, Downstairs.
# "Brush teeth" is printed as 0.9/0.2; from_weights renormalizes it.
DEFAULT_MIX_WEIGHTS: dict[str, list[float]] = {
    "Shower": [0, 0.9, 0.1, 0, 0, 0],
    "Breakfast": [0.8, 0.1, 0.1, 0, 0, 0],
    "Brush teeth": [0, 0.9, 0.2, 0, 0, 0],
    "Transportation": [0.5, 0, 0.5, 0, 0, 0],
    "Work": [0.3, 0.3, 0.2, 0, 0.1, 0.1],
    "At Park": [0.2, 0.1, 0.6, 0.1, 0, 0],
    "At School": [0.5, 0.2, 0.2, 0, 0.1, 0.1],
    "Lunch": [0.8, 0.1, 0.1, 0, 0, 0],
    "Watch TV": [0.8, 0.1, 0.1, 0, 0, 0],
    "Study": [0.8, 0.1, 0.1, 0, 0, 0],
    "Workout": [0, 0.1, 0.4, 0.3, 0.1, 0.1],
    "Dinner": [0.8, 0.1, 0.1, 0, 0, 0],
}

# (activity, start, start variance, duration, duration variance)
DEFAULT_TEMPLATE_ROWS: dict[str, list[tuple]] = {
    "employee": [
        ("Shower", "7:00", "0:20", "0:30", "0:05"),
        ("Breakfast", "7:30", "0:15", "0:20", "0:05"),
        ("Brush teeth", "7:50", "1:15", "0:10", "0:00"),
        ("Transportation", "8:00", "0:30", "1:00", "0:25"),
        ("Work", "9:00", "0:00", "4:00", "0:05"),
        ("Lunch", "13:00", "1:00", "0:30", "0:10"),
        ("Work", "13:30", "0:00", "1:30", "0:30"),
        ("Watch TV", "16:30", "0:15", "1:30", "0:25"),
        ("Dinner", "18:00", "0:20", "0:45", "0:15"),
    ],
    "student": [
        ("Breakfast", "7:15", "0:15", "0:20", "0:05"),
        ("Transportation", "7:40", "0:10", "0:40", "0:10"),
        ("At School", "8:30", "0:10", "5:00", "0:20"),
        ("Lunch", "13:40", "0:10", "0:40", "0:10"),
        ("At Park", "14:30", "0:30", "1:00", "0:20"),
        ("Study", "16:00", "0:30", "2:00", "0:30"),
        ("Dinner", "18:30", "0:20", "0:40", "0:10"),
        ("Watch TV", "19:30", "0:15", "1:30", "0:30"),
    ],
    "elderly": [
        ("Breakfast", "7:00", "0:30", "0:40", "0:10"),
        ("At Park", "8:00", "0:30", "1:30", "0:30"),
        ("Watch TV", "10:00", "0:20", "2:30", "0:30"),
        ("Lunch", "12:45", "0:15", "0:45", "0:10"),
        ("Watch TV", "14:00", "0:20", "3:00", "0:30"),
        ("Dinner", "17:30", "0:20", "0:45", "0:10"),
        ("Watch TV", "18:30", "0:15", "2:00", "0:30"),
    ],
    "athlete": [
        ("Shower", "6:30", "0:10", "0:20", "0:05"),
        ("Breakfast", "7:00", "0:10", "0:30", "0:05"),
        ("Workout", "8:00", "0:20", "2:00", "0:20"),
        ("Lunch", "11:00", "0:30", "0:45", "0:10"),
        ("Study", "12:30", "0:30", "2:00", "0:30"),
        ("Workout", "16:00", "0:20", "1:30", "0:20"),
        ("Dinner", "18:30", "0:20", "0:45", "0:10"),
    ],
}


def default_mix() -> ActivityMixTable:
    return ActivityMixTable.from_weights(DEFAULT_MIX_WEIGHTS)


def default_templates() -> dict[str, ScheduleTemplate]:
    return {g: ScheduleTemplate.from_rows(g, rows) for g, rows in DEFAULT_TEMPLATE_ROWS.items()}


def sample_schedule(template: ScheduleTemplate, day: int, rng_seed: int) -> list[ScheduledActivity]:
    """Draw one concrete day from ``template``.

    Starts and durations are uniform integers on ``value ± variance``.  Overlaps
    are resolved by cutting the earlier activity at the later one's start.
    """
    template.validate()
    rng = np.random.default_rng([int(rng_seed), int(day)])
    drawn = []
    for e in template.entries:
        start = int(rng.integers(e.start - e.start_variance, e.start + e.start_variance + 1))
        dur = int(rng.integers(e.duration - e.duration_variance, e.duration + e.duration_variance + 1))
        start = min(max(start, 0), MINUTES_PER_DAY - 1)
        end = min(start + max(dur, 1), MINUTES_PER_DAY)
        drawn.append((start, end, e.activity))
    drawn.sort(key=lambda x: x[0])  # stable: template order breaks ties
    out = []
    for i, (start, end, activity) in enumerate(drawn):
        if i + 1 < len(drawn):
            end = min(end, drawn[i + 1][0])
        if end > start:
            out.append(ScheduledActivity(activity, start, end - start))
    return out


def largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Split ``total`` whole units proportionally to ``weights``.

    Leftover units go to the largest fractional parts, lower index first on ties.
    """
    quotas = np.asarray(weights, dtype=float) * total
    counts = np.floor(quotas).astype(int)
    left = int(total - counts.sum())
    if left > 0:
        frac = quotas - counts
        order = sorted(range(len(frac)), key=lambda i: (-frac[i], i))
        for i in order[:left]:
            counts[i] += 1
    return counts


@dataclass
class LabelTimeline:
    """Minute-resolution labels starting at absolute minute ``start``; ``GAP`` marks no data."""

    start: int
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def labeled_minutes(self) -> int:
        return int(np.count_nonzero(self.labels != GAP))


def convert_to_labels(
    day_schedule: Sequence[ScheduledActivity],
    mix: ActivityMixTable,
    rng_seed: int,
    day_start: int = 0,
    length: int = MINUTES_PER_DAY,
) -> LabelTimeline:
    rng = np.random.default_rng([int(rng_seed), int(day_start)])
    labels = np.full(length, GAP, dtype=np.int8)
    for block in day_schedule:
        row = mix.row(block.activity)
        counts = largest_remainder(row, block.duration)
        present = [c for c in range(NUM_CLASSES) if counts[c] > 0]
        order = rng.permutation(len(present))
        pos = block.start
        for j in order:
            c = present[j]
            labels[pos : pos + counts[c]] = c
            pos += counts[c]
    return LabelTimeline(day_start, labels)


@dataclass
class ClassFeatureModel:
    """Per-class Gaussian feature generator (isotropic up to the per-feature std vector)."""

    means: np.ndarray
    stds: np.ndarray
    seed: int = 0

    def __post_init__(self) -> None:
        self.means = np.asarray(self.means, dtype=float)
        self.stds = np.asarray(self.stds, dtype=float)
        if self.means.shape != self.stds.shape or self.means.ndim != 2:
            raise ValueError("means and stds must both be (classes, features)")
        if np.any(self.stds <= 0):
            raise ValueError("standard deviations must be positive")
        for a in range(len(self.means)):
            for b in range(a + 1, len(self.means)):
                if np.array_equal(self.means[a], self.means[b]):
                    raise ValueError(f"classes {a} and {b} share a mean vector")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def random(
        cls,
        dim: int,
        seed: int,
        separation: float = 1.0,
        noise: float = 1.0,
        num_classes: int = NUM_CLASSES,
    ) -> ClassFeatureModel:
        rng = np.random.default_rng(seed)
        means = rng.normal(0.0, separation, size=(num_classes, dim))
        return cls(means, np.full((num_classes, dim), float(noise)), seed)

    def sample(self, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        labels = np.asarray(labels, dtype=int)
        z = rng.standard_normal((len(labels), self.dim))
        return self.means[labels] + self.stds[labels] * z


@dataclass(frozen=True, eq=False)
class LabeledWindow:
    client_id: int
    t: int
    features: np.ndarray = field(repr=False)
    label: int


def majority_label(span: Sequence[int]) -> int:
    """Most frequent label in ``span``; ties go to the label seen first."""
    counts: dict[int, int] = {}
    for x in span:
        counts[x] = counts.get(x, 0) + 1
    best = max(counts.values())
    for x in span:
        if counts[x] == best:
            return int(x)
    raise ValueError("empty span")


def _window_starts(length: int, window_len: int, stride: int) -> range:
    if length < window_len:
        return range(0)
    return range(0, length - window_len + 1, stride)


def num_segments(length: int, window_len: int, stride: int) -> int:
    return (length - window_len) // stride + 1 if length >= window_len else 0


def _covered_runs(labels: np.ndarray) -> list[tuple[int, int]]:
    covered = labels != GAP
    runs = []
    i, n = 0, len(labels)
    while i < n:
        if not covered[i]:
            i += 1
            continue
        j = i
        while j < n and covered[j]:
            j += 1
        runs.append((i, j))
        i = j
    return runs


def emit_windows(
    timeline: LabelTimeline,
    feat: ClassFeatureModel,
    window_len: int,
    stride: int,
    rng_seed: int | None = None,
    client_id: int = 0,
) -> list[LabeledWindow]:
    """Cut ``timeline`` into windows; windows never span an uncovered gap."""
    if window_len < 1 or stride < 1:
        raise ValueError("window_len and stride must be >= 1")
    seed = feat.seed if rng_seed is None else rng_seed
    rng = np.random.default_rng([int(seed), int(client_id), int(timeline.start) & 0xFFFFFFFF])
    starts, labels = [], []
    for a, b in _covered_runs(timeline.labels):
        run = timeline.labels[a:b]
        for s in _window_starts(b - a, window_len, stride):
            starts.append(timeline.start + a + s)
            labels.append(majority_label(run[s : s + window_len].tolist()))
    if not labels:
        return []
    feats = feat.sample(np.array(labels), rng)
    return [LabeledWindow(client_id, t, feats[i], y) for i, (t, y) in enumerate(zip(starts, labels))]


def generate_stream(
    template: ScheduleTemplate,
    mix: ActivityMixTable,
    feat: ClassFeatureModel,
    days: int,
    window_len: int,
    stride: int,
    seed: int,
    client_id: int = 0,
) -> list[LabeledWindow]:
    """Windows for ``days`` consecutive simulated days, one fresh schedule per day."""
    out: list[LabeledWindow] = []
    for day in range(days):
        schedule = sample_schedule(template, day, seed)
        timeline = convert_to_labels(schedule, mix, seed, day_start=day * MINUTES_PER_DAY)
        out.extend(emit_windows(timeline, feat, window_len, stride, rng_seed=seed, client_id=client_id))
    return out


def make_test_set(
    template: ScheduleTemplate,
    mix: ActivityMixTable,
    feat: ClassFeatureModel,
    window_len: int,
    stride: int,
    seed: int,
    client_id: int = 0,
    min_per_class: int = 5,
) -> list[LabeledWindow]:
    """One variance-free day plus injected windows so every class is present."""
    fixed = template.without_variance()
    schedule = sample_schedule(fixed, 0, seed)
    timeline = convert_to_labels(schedule, mix, seed)
    windows = emit_windows(timeline, feat, window_len, stride, rng_seed=seed, client_id=client_id)
    seen = np.bincount([w.label for w in windows], minlength=feat.means.shape[0])
    missing = [c for c in range(feat.means.shape[0]) for _ in range(max(0, min_per_class - seen[c]))]
    if missing:
        rng = np.random.default_rng([int(seed), int(client_id), 0x7E57])
        feats = feat.sample(np.array(missing), rng)
        windows.extend(LabeledWindow(client_id, -1, feats[i], c) for i, c in enumerate(missing))
    return windows


def ingest_external(path: str | Path, window_len: int = 20, stride: int = 10) -> list[LabeledWindow]:
    """Read WISDM-style ``user,class,timestamp,x,y,z`` rows into windows.

    Rows are grouped per user in file order and segmented like :func:`emit_windows`,
    with the raw x/y/z readings of each window flattened as features.  WISDM's
    trailing ``;`` is tolerated.
    """
    if window_len < 1 or stride < 1:
        raise ValueError("window_len and stride must be >= 1")
    per_user: dict[int, list[tuple[int, int, tuple[float, float, float]]]] = defaultdict(list)
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            row = [c.strip().rstrip(";").strip() for c in row]
            while row and row[-1] == "":
                row.pop()
            if not row:
                continue
            if len(row) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            try:
                user, ts = int(row[0]), int(float(row[2]))
                xyz = (float(row[3]), float(row[4]), float(row[5]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed row ({exc})") from None
            if not all(math.isfinite(v) for v in xyz):
                raise ValueError(f"{path}:{lineno}: non-finite reading")
            try:
                label = label_index(row[1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            per_user[user].append((ts, label, xyz))
    out: list[LabeledWindow] = []
    for user in sorted(per_user):
        rows = per_user[user]
        labels = [r[1] for r in rows]
        readings = np.array([r[2] for r in rows], dtype=float)
        for s in _window_starts(len(rows), window_len, stride):
            y = majority_label(labels[s : s + window_len])
            out.append(LabeledWindow(user, rows[s][0], readings[s : s + window_len].ravel(), y))
    return out


def group_by_client(windows: Iterable[LabeledWindow]) -> dict[int, list[LabeledWindow]]:
    out: dict[int, list[LabeledWindow]] = defaultdict(list)
    for w in windows:
        out[w.client_id].append(w)
    return dict(sorted(out.items()))
