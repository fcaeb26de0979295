"""Command-line front end.

Exit status: 0 on success, 1 for an invalid configuration or bad arguments,
2 when a run finished but some rounds recorded errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .compare import CompareError, compare_runs
from .config import ConfigError, load_config
from .experiment import resolve_output_dir, run_experiment, write_traces
from .presets import PRESETS, load_preset, preset_dict

log = logging.getLogger("flexfed_sim")


def _load(target: str, seed: int | None):
    if target in PRESETS and not Path(target).exists():
        cfg = load_preset(target)
    else:
        cfg = load_config(target)
    if seed is not None:
        cfg.seed = seed
        cfg.sweep.seeds = []
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args.target, args.seed)
    out = resolve_output_dir(cfg, args.out)
    if not args.out:
        out = out / cfg.name
    status = run_experiment(cfg, out)
    print(f"results written to {out}")
    return status


def cmd_compare(args) -> int:
    table = compare_runs(args.dirs, args.out)
    for row in table:
        print(
            f"{row['strategy']:<24} seeds={row['seeds']} acc={row['final_accuracy_mean']:.4f} "
            f"infrequent={row['final_infrequent_accuracy_mean']:.4f} "
            f"|F| last20={row['abs_forgetting_last20_mean']:.4f}"
        )
    return 0


def cmd_gen_traces(args) -> int:
    cfg = _load(args.target, args.seed)
    out = Path(args.out) if args.out else resolve_output_dir(cfg) / f"{cfg.name}-traces"
    paths = write_traces(cfg, out)
    print(f"wrote {len(paths)} traces to {out}")
    return 0


def cmd_presets(args) -> int:
    if args.action == "list":
        for name, data in PRESETS.items():
            print(f"{name:<16} {data.get('description', '')}")
        return 0
    if not args.name:
        raise ConfigError("presets show: give a preset name")
    try:
        print(json.dumps(preset_dict(args.name), indent=2))
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flexfed-sim", description="Federated continual-learning simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a config file (.toml/.json) or a preset name")
    r.add_argument("target")
    r.add_argument("--out", help="output directory (overrides FLEXFED_SIM_OUTPUT_DIR and the config)")
    r.add_argument("--seed", type=int, help="single master seed, replaces the sweep seeds")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="aggregate result directories across seeds")
    c.add_argument("dirs", nargs="+")
    c.add_argument("--out", default="comparison")
    c.set_defaults(func=cmd_compare)

    g = sub.add_parser("gen-traces", help="write per-client availability traces for a config")
    g.add_argument("target")
    g.add_argument("--out")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_traces)

    s = sub.add_parser("presets", help="list or show built-in presets")
    s.add_argument("action", choices=["list", "show"])
    s.add_argument("name", nargs="?")
    s.set_defaults(func=cmd_presets)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CompareError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
