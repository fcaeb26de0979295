"""Cross-seed comparison of finished runs.

Runs are grouped by label (strategy name plus any flag overrides).  For each
group and round the mean and the population standard deviation (ddof=0) over
seeds are written as long-format CSV files, one per figure analog:

* ``accuracy.csv``: overall test accuracy per round
* ``forgetting.csv``: ``|F^r|`` per round
* ``class_accuracy.csv`` / ``class_forgetting.csv``: the per-class versions
* ``comparison.csv``: one row per group with final and tail statistics
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import LABELS

INFREQUENT = (LABELS.index("Upstairs"), LABELS.index("Downstairs"))
TAIL = 20


class CompareError(ValueError):
    pass


@dataclass
class RunData:
    path: Path
    label: str
    seed: int
    header: list[str]
    rounds: np.ndarray
    accuracy: np.ndarray  # (R,)
    forgetting: np.ndarray  # (R,) signed
    class_accuracy: np.ndarray  # (R, C)
    class_forgetting: np.ndarray  # (R, C)


def run_label(cfg: dict) -> str:
    flags = cfg.get("strategy_flags") or {}
    if not flags:
        return cfg["strategy"]
    extra = ",".join(f"{k}={'on' if v else 'off'}" for k, v in sorted(flags.items()))
    return f"{cfg['strategy']}[{extra}]"


def load_run(path: str | Path) -> RunData:
    path = Path(path)
    rounds_file = path / "rounds.csv"
    if not rounds_file.is_file():
        raise CompareError(f"{path}: no rounds.csv in this directory")
    cfg_file = path / "config.resolved.json"
    cfg = json.loads(cfg_file.read_text()) if cfg_file.is_file() else {"strategy": path.name, "seed": 0}
    with open(rounds_file, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CompareError(f"{path}: rounds.csv is empty")
    header, body = rows[0], rows[1:]
    col = {name: i for i, name in enumerate(header)}
    try:
        acc_cols = [col[f"acc_{n.lower()}"] for n in LABELS]
        f_cols = [col[f"forgetting_{n.lower()}"] for n in LABELS]

        def num(name):
            return np.array([float(r[col[name]]) for r in body])

        return RunData(
            path=path,
            label=run_label(cfg),
            seed=int(cfg.get("seed", 0)),
            header=header,
            rounds=num("round").astype(int),
            accuracy=num("overall_accuracy"),
            forgetting=num("forgetting"),
            class_accuracy=np.array([[float(r[i]) for i in acc_cols] for r in body]).reshape(len(body), len(LABELS)),
            class_forgetting=np.array([[float(r[i]) for i in f_cols] for r in body]).reshape(len(body), len(LABELS)),
        )
    except (KeyError, ValueError, IndexError) as exc:
        raise CompareError(f"{path}: rounds.csv does not match the expected schema ({exc})") from None


def _check_compatible(runs: Sequence[RunData]) -> None:
    ref = runs[0]
    for r in runs[1:]:
        if r.header != ref.header:
            raise CompareError(f"schema mismatch: {r.path} and {ref.path} have different rounds.csv columns")
        if not np.array_equal(r.rounds, ref.rounds):
            raise CompareError(f"schema mismatch: {r.path} and {ref.path} cover different rounds")


def _stats(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # NaN-aware so classes missing from a run do not poison the others
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(stack, axis=0), np.nanstd(stack, axis=0, ddof=0)


def _fmt(v: float) -> str:
    return "nan" if np.isnan(v) else repr(float(v))


def group(runs: Sequence[RunData]) -> dict[str, list[RunData]]:
    out: dict[str, list[RunData]] = {}
    for r in runs:
        out.setdefault(r.label, []).append(r)
    return out


def summary_rows(groups: dict[str, list[RunData]]) -> list[dict]:
    rows = []
    for label, runs in groups.items():
        final_acc = np.array([r.accuracy[-1] for r in runs])
        infreq = np.array([np.nanmean(r.class_accuracy[-1, list(INFREQUENT)]) for r in runs])
        macro = np.array([np.nanmean(r.class_accuracy[-1]) for r in runs])
        tail = np.array([np.mean(np.abs(r.forgetting[-TAIL:])) for r in runs])
        whole = np.array([np.mean(np.abs(r.forgetting)) for r in runs])
        rows.append(
            {
                "strategy": label,
                "seeds": len(runs),
                "final_accuracy_mean": float(final_acc.mean()),
                "final_accuracy_std": float(final_acc.std()),
                "final_macro_accuracy_mean": float(macro.mean()),
                "final_infrequent_accuracy_mean": float(infreq.mean()),
                "final_infrequent_accuracy_std": float(infreq.std()),
                "abs_forgetting_last20_mean": float(tail.mean()),
                "abs_forgetting_last20_std": float(tail.std()),
                "abs_forgetting_mean": float(whole.mean()),
            }
        )
    return rows


def _write(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def compare_runs(dirs: Sequence[str | Path], out_dir: str | Path) -> list[dict]:
    """Write the comparison files into ``out_dir`` and return the summary table."""
    if len(dirs) < 2:
        raise CompareError("need at least two result directories")
    runs = [load_run(d) for d in dirs]
    _check_compatible(runs)
    groups = group(runs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rounds = runs[0].rounds

    scalar = {"accuracy.csv": lambda r: r.accuracy, "forgetting.csv": lambda r: np.abs(r.forgetting)}
    for fname, get in scalar.items():
        rows = []
        for label, rs in groups.items():
            mean, std = _stats(np.stack([get(r) for r in rs]))
            rows += [[int(t), label, len(rs), _fmt(m), _fmt(s)] for t, m, s in zip(rounds, mean, std)]
        _write(out / fname, ["round", "strategy", "n", "mean", "std"], rows)

    per_class = {"class_accuracy.csv": lambda r: r.class_accuracy, "class_forgetting.csv": lambda r: np.abs(r.class_forgetting)}
    for fname, get in per_class.items():
        rows = []
        for label, rs in groups.items():
            mean, std = _stats(np.stack([get(r) for r in rs]))
            for i, t in enumerate(rounds):
                rows += [[int(t), label, name, len(rs), _fmt(mean[i, c]), _fmt(std[i, c])] for c, name in enumerate(LABELS)]
        _write(out / fname, ["round", "strategy", "class", "n", "mean", "std"], rows)

    table = summary_rows(groups)
    cols = list(table[0])
    _write(out / "comparison.csv", cols, [[_fmt(v) if isinstance(v, float) else v for v in (row[c] for c in cols)] for row in table])
    return table
