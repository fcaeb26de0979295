"""Named experiment configurations.

``paper-full`` carries the published setup (100 clients, 300 rounds of 300
simulated minutes, 10 local epochs, batch 32, learning rate 0.005); it takes
hours on a laptop because every round trains up to 25 clients.  ``paper-desk``
is the scaled substitute used for trend checks, and ``smoke`` only exercises
the pipeline.
"""

from __future__ import annotations

import copy

from .config import ExperimentConfig, from_dict

ALL_STRATEGIES = ["fedavg", "refl", "mifa", "flexfed"]

PRESETS: dict[str, dict] = {
    "smoke": {
        "name": "smoke",
        "description": "4 clients, 5 rounds: pipeline check only",
        "strategy": "flexfed",
        "num_clients": 4,
        "rounds": 5,
        "memory": 60,
        "epochs": 2,
        "hidden": 8,
        "tau": 0.5,
        "beta": 0.25,
    },
    "paper-desk": {
        "name": "paper-desk",
        "description": (
            "Desk-scale substitute for the published comparison: 20 clients, 60 rounds, "
            "memory 200, tau 0.25, beta 0.3, p_connected 0.5, 5 local epochs, "
            "all four strategies over seeds 0-2"
        ),
        "strategy": "flexfed",
        "num_clients": 20,
        "rounds": 60,
        "memory": 200,
        "tau": 0.25,
        "beta": 0.3,
        "epochs": 5,
        "batch_size": 32,
        "lr": 0.005,
        "availability": {"p_connected": 0.5},
        "sweep": {"strategies": ALL_STRATEGIES, "seeds": [0, 1, 2]},
    },
    "paper-full": {
        "name": "paper-full",
        "description": (
            "Published hyperparameters (K=100, R=300, L=300, E=10, B=32, lr=0.005) "
            "with the small classifier and synthetic streams; hours of runtime"
        ),
        "strategy": "flexfed",
        "num_clients": 100,
        "rounds": 300,
        "round_minutes": 300,
        "memory": 200,
        "tau": 0.25,
        "beta": 0.3,
        "epochs": 10,
        "batch_size": 32,
        "lr": 0.005,
        "sweep": {"strategies": ALL_STRATEGIES, "seeds": [0, 1, 2]},
    },
    # memory-constraint illustration: unconstrained storage vs a bounded FIFO
    "memory-static": {
        "name": "memory-static",
        "description": "FedAvg with effectively unbounded client memory",
        "strategy": "fedavg",
        "num_clients": 20,
        "rounds": 40,
        "memory": 100000,
        "epochs": 3,
        "availability": {"p_connected": 0.5},
        "sweep": {"seeds": [0, 1, 2]},
    },
    "memory-dynamic": {
        "name": "memory-dynamic",
        "description": "FedAvg with a 200-window FIFO memory per client",
        "strategy": "fedavg",
        "num_clients": 20,
        "rounds": 40,
        "memory": 200,
        "epochs": 3,
        "availability": {"p_connected": 0.5},
        "sweep": {"seeds": [0, 1, 2]},
    },
}


def preset_names() -> list[str]:
    return list(PRESETS)


def preset_dict(name: str) -> dict:
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None


def load_preset(name: str, **overrides) -> ExperimentConfig:
    data = preset_dict(name)
    data.update(overrides)
    return from_dict(data)
