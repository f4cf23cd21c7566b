"""Wall-clock cost of action selection."""

from __future__ import annotations

import time

import numpy as np

from ..env import EnvConfig, FleetEnv


def time_controller(controller, N: int, steps: int = 25, seed: int = 0, Nc: int = 9,
                    base_config: EnvConfig | None = None) -> dict:
    """Mean wall time of ``controller.act`` over ``steps`` steps of an N-house fleet.

    Decentralised controllers are charged per agent (total / N), matching the
    time each house would spend on its own forward pass; centralised ones are
    charged the whole-system selection time.
    """
    base = EnvConfig() if base_config is None else base_config
    env = FleetEnv(base.with_(N=N, Nc=min(Nc, N - 1), init_sigma=0.5))
    env.reset(seed=seed)
    controller.reset(env)
    elapsed = []
    for _ in range(steps):
        t0 = time.perf_counter()
        actions = controller.act(env)
        elapsed.append(time.perf_counter() - t0)
        env.step(actions)
    total = float(np.mean(elapsed))
    decentralized = bool(getattr(controller, "decentralized", True))
    return {
        "controller": getattr(controller, "name", type(controller).__name__),
        "N": N,
        "decentralized": decentralized,
        "step_seconds": total,
        "selection_seconds": total / N if decentralized else total,
    }


def timing_report(controller_factories: dict, sizes=(10, 100, 1000), steps: int = 25, seed: int = 0,
                  base_config: EnvConfig | None = None) -> list[dict]:
    rows = []
    for name, factory in controller_factories.items():
        for N in sizes:
            row = time_controller(factory(), N, steps, seed, base_config=base_config)
            row["controller"] = name
            rows.append(row)
    return rows
