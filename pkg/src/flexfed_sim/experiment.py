"""Run orchestration: build a simulation from a config, execute it, write result files."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from pathlib import Path
from typing import Sequence

import numpy as np

from . import LABELS, NUM_CLASSES
from .availability import AvailabilityProfile, AvailabilityTrace, generate_trace, read_trace, write_trace
from .client import Client, OfflinePolicy
from .config import ExperimentConfig
from .har_stream import (
    ActivityMixTable,
    ClassFeatureModel,
    DEFAULT_MIX_WEIGHTS,
    MINUTES_PER_DAY,
    ScheduleTemplate,
    default_templates,
    generate_stream,
    make_test_set,
)
from .learner import ModelShape, TrainConfig, init_params
from .memory import MemoryBuffer
from .seeding import derive_seed
from .server import RoundRecord, Server
from .strategies import StrategySpec, make_strategy

log = logging.getLogger(__name__)

OUTPUT_ENV = "FLEXFED_SIM_OUTPUT_DIR"
INFREQUENT = (LABELS.index("Upstairs"), LABELS.index("Downstairs"))

ROUND_COLUMNS = (
    ["round", "cancelled", "selected", "participants", "staleness", "overall_accuracy"]
    + [f"acc_{name.lower()}" for name in LABELS]
    + ["forgetting"]
    + [f"forgetting_{name.lower()}" for name in LABELS]
    + ["mean_loss", "errors"]
)


def build_templates(cfg: ExperimentConfig) -> dict[str, ScheduleTemplate]:
    templates = default_templates()
    for group, rows in cfg.templates.items():
        templates[group] = ScheduleTemplate.from_rows(group, rows)
    missing = [g for g in cfg.client_groups if g not in templates]
    if missing:
        raise ValueError(f"client_groups: no template for {missing}")
    return templates


def build_mix(cfg: ExperimentConfig) -> ActivityMixTable:
    return ActivityMixTable.from_weights({**DEFAULT_MIX_WEIGHTS, **cfg.mix})


def client_trace(cfg: ExperimentConfig, k: int) -> AvailabilityTrace:
    a = cfg.availability
    if a.trace_dir is not None:
        return read_trace(Path(a.trace_dir) / f"client_{k}.csv", cfg.rounds)
    return generate_trace(client_profile(cfg, k), cfg.rounds, cfg.round_minutes, cfg.start_minute)


def client_profile(cfg: ExperimentConfig, k: int) -> AvailabilityProfile:
    a = cfg.availability
    p_conn = a.p_connected
    if a.heterogeneity > 0:
        rng = np.random.default_rng(derive_seed(cfg.seed, "avail-profile", k))
        p_conn = float(np.clip(p_conn + rng.uniform(-a.heterogeneity, a.heterogeneity), 0.0, 1.0))
    return AvailabilityProfile(
        p_connected=p_conn,
        p_idle=a.p_idle,
        p_powered=a.p_powered,
        diurnal_amplitude=a.diurnal_amplitude,
        peak_minute=a.peak_minute,
        seed=derive_seed(cfg.seed, "avail", k),
    )


def build_server(cfg: ExperimentConfig, traces: Sequence[AvailabilityTrace] | None = None) -> Server:
    spec = StrategySpec.named(cfg.strategy, **cfg.strategy_flags)
    strategy = make_strategy(spec)
    templates = build_templates(cfg)
    mix = build_mix(cfg)
    mix.check_covers(templates[g] for g in cfg.client_groups)
    feat = ClassFeatureModel.random(
        cfg.input_dim,
        derive_seed(cfg.seed, "features"),
        separation=cfg.feature_separation,
        noise=cfg.feature_noise,
    )
    shape = ModelShape(cfg.input_dim, cfg.hidden, NUM_CLASSES)
    theta0 = init_params(shape, derive_seed(cfg.seed, "init"))
    horizon = cfg.start_minute + cfg.rounds * cfg.round_minutes
    days = math.ceil(horizon / MINUTES_PER_DAY)
    clients = []
    for k in range(cfg.num_clients):
        tpl = templates[cfg.client_groups[k % len(cfg.client_groups)]]
        stream = generate_stream(
            tpl, mix, feat, days, cfg.window_len, cfg.stride, derive_seed(cfg.seed, "stream", k), client_id=k
        )
        test = make_test_set(
            tpl, mix, feat, cfg.window_len, cfg.stride, derive_seed(cfg.seed, "test", k), client_id=k
        )
        trace = traces[k] if traces is not None else client_trace(cfg, k)
        clients.append(
            Client(
                id=k,
                buffer=MemoryBuffer(cfg.memory),
                test_set=test,
                trace=trace,
                stream=stream,
                theta_stored=theta0.copy(),
                window_len=cfg.window_len,
                adaptive_memory=spec.adaptive_memory,
                gate_uploads=spec.offline_training,
                compare_metric=cfg.compare_metric,
                infrequent_threshold=cfg.infrequent_threshold,
                refresh_alpha_offline=cfg.refresh_alpha_offline,
                seed=cfg.seed,
            )
        )
    return Server(
        clients,
        theta0,
        strategy,
        TrainConfig(cfg.epochs, cfg.batch_size, cfg.lr, cfg.seed),
        beta=cfg.beta,
        tau=cfg.tau,
        round_minutes=cfg.round_minutes,
        start_minute=cfg.start_minute,
        weighting=cfg.weighting,
        offline_policy=OfflinePolicy(cfg.offline.max_sessions, cfg.offline.compute_budget),
        seed=cfg.seed,
    )


# -- result files ----------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    return str(v)


def record_row(rec: RoundRecord) -> list[str]:
    return [
        _fmt(rec.round),
        _fmt(rec.cancelled),
        _fmt(rec.selected),
        _fmt(rec.participants),
        _fmt(rec.staleness),
        _fmt(rec.overall_accuracy),
        *(_fmt(float(v)) for v in rec.per_class_accuracy),
        _fmt(rec.forgetting),
        *(_fmt(float(v)) for v in rec.per_class_forgetting),
        _fmt(rec.mean_loss),
        " | ".join(rec.errors),
    ]


def rounds_csv(records: Sequence[RoundRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROUND_COLUMNS)
    for rec in records:
        w.writerow(record_row(rec))
    return buf.getvalue()


def summarize(cfg: ExperimentConfig, server: Server) -> dict:
    from .metrics import bwt_final

    records = server.records
    final = records[-1]
    per_class = [float(v) for v in final.per_class_accuracy]
    abs_f = [abs(r.forgetting) for r in records]
    last = abs_f[-min(20, len(abs_f)) :]
    bwt = bwt_final(server.history.global_per_class())[0] if len(records) >= 2 else None
    stored_violations = sum(
        int(b < a) for c in server.clients for a, b in zip(c.stored_history, c.stored_history[1:])
    )
    mon = server.prior_tasks
    return {
        "strategy": cfg.strategy,
        "flags": StrategySpec.named(cfg.strategy, **cfg.strategy_flags).flags(),
        "seed": cfg.seed,
        "rounds": len(records),
        "cancelled_rounds": sum(r.cancelled for r in records),
        "final_overall_accuracy": final.overall_accuracy,
        "final_macro_accuracy": float(np.mean(per_class)),
        "final_infrequent_accuracy": float(np.mean([per_class[c] for c in INFREQUENT])),
        "final_per_class_accuracy": dict(zip(LABELS, per_class)),
        "bwt_forgetting": bwt,
        "mean_abs_forgetting": float(np.mean(abs_f)),
        "mean_abs_forgetting_last20": float(np.mean(last)),
        "prior_task_violation_fraction": mon.violation_fraction if mon is not None else None,
        "stored_model_violations": stored_violations,
        "offline_sessions": sum(c.offline_sessions for c in server.clients),
        "alpha_updates": sum(c.alpha_updates for c in server.clients),
        "round_errors": sum(len(r.errors) for r in records),
    }


def diagnostics_csv(records: Sequence[RoundRecord]) -> str:
    keys = sorted({k for r in records for k in r.diagnostics})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", *keys])
    for r in records:
        w.writerow([r.round, *(_fmt(r.diagnostics.get(k, "")) for k in keys)])
    return buf.getvalue()


def memory_csv(server: Server) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["client", "alpha", "budget", *(f"fifo_{n.lower()}" for n in LABELS), *(f"kept_{n.lower()}" for n in LABELS)])
    for c in server.clients:
        snap = c.buffer.snapshot()
        w.writerow([c.id, repr(c.alpha), snap["budget"], *snap["fifo"], *snap["retained"]])
    return buf.getvalue()


def run_single(cfg: ExperimentConfig, out_dir: Path | None = None) -> tuple[Server, dict]:
    server = build_server(cfg)
    for _ in range(cfg.rounds):
        server.run_round()
    summary = summarize(cfg, server)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "rounds.csv").write_text(rounds_csv(server.records))
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        (out_dir / "config.resolved.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        (out_dir / "diagnostics.csv").write_text(diagnostics_csv(server.records))
        (out_dir / "memory.csv").write_text(memory_csv(server))
        timings = "round,wall_ms\n" + "".join(f"{r.round},{r.wall_ms:.3f}\n" for r in server.records)
        (out_dir / "timings.csv").write_text(timings)
    return server, summary


def resolve_output_dir(cfg: ExperimentConfig, override: str | None = None) -> Path:
    return Path(override or os.environ.get(OUTPUT_ENV) or cfg.output_dir)


def run_experiment(cfg: ExperimentConfig, out_root: Path) -> int:
    """Run every (strategy, seed) of ``cfg``; returns 0, or 2 if any round recorded errors."""
    runs = cfg.single_runs()
    status = 0
    dirs = []
    for run in runs:
        sub = out_root if len(runs) == 1 else out_root / f"{run.strategy}-s{run.seed}"
        log.info("running %s seed=%d -> %s", run.strategy, run.seed, sub)
        _, summary = run_single(run, sub)
        dirs.append(sub)
        if summary["round_errors"]:
            status = 2
    if len(runs) > 1:
        from .compare import compare_runs

        compare_runs(dirs, out_root / "comparison")
    return status


def write_traces(cfg: ExperimentConfig, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in range(cfg.num_clients):
        p = out_dir / f"client_{k}.csv"
        write_trace(generate_trace(client_profile(cfg, k), cfg.rounds, cfg.round_minutes, cfg.start_minute), p)
        paths.append(p)
    return paths
