"""Rollouts and RMSE metrics over a benchmark window."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..env import EnvConfig, FleetEnv

DEFAULT_HORIZON = 43200
DEFAULT_WARMUP = 5000


@dataclass
class Trace:
    """Per-step aggregate signal error and temperature errors of one rollout."""

    P: np.ndarray
    s: np.ndarray
    temp_err: np.ndarray  # (steps, N)
    N: int


def signal_rmse(P, s, N, warmup: int = 0) -> float:
    err = (np.asarray(P)[warmup:] - np.asarray(s)[warmup:]) / N
    return float(np.sqrt(np.mean(err**2)))


def temperature_rmse(temp_err, warmup: int = 0) -> float:
    return float(np.sqrt(np.mean(np.asarray(temp_err)[warmup:] ** 2)))


def max_temperature_rmse(temp_err, warmup: int = 0) -> float:
    """RMSE over time of the largest absolute temperature error across the fleet at each step."""
    worst = np.max(np.abs(np.asarray(temp_err)[warmup:]), axis=1)
    return float(np.sqrt(np.mean(worst**2)))


def trace_metrics(trace: Trace, warmup: int) -> dict:
    return {
        "signal_rmse": signal_rmse(trace.P, trace.s, trace.N, warmup),
        "temp_rmse": temperature_rmse(trace.temp_err, warmup),
        "max_temp_rmse": max_temperature_rmse(trace.temp_err, warmup),
    }


def run_episode(controller, env_config: EnvConfig, seed: int = 0, horizon: int = DEFAULT_HORIZON,
                warmup: int = DEFAULT_WARMUP, record_stride: int = 0, env: FleetEnv | None = None):
    """Roll a controller out for ``horizon`` steps; returns (records, metrics).

    ``records`` holds one dict every ``record_stride`` steps (empty when 0).
    """
    env = FleetEnv(env_config) if env is None else env
    env.reset(seed=seed)
    controller.reset(env)
    N = env_config.N
    P = np.empty(horizon)
    s = np.empty(horizon)
    temp_err = np.empty((horizon, N))
    records = []
    for t in range(horizon):
        actions = controller.act(env)
        _, _, st = env.step(actions)
        P[t] = st.P
        s[t] = st.tracked_signal
        temp_err[t] = st.Th - env_config.target
        if record_stride and t % record_stride == 0:
            records.append({"t": st.time, "s": st.tracked_signal, "P": st.P, "Da": st.Da,
                            "Th": st.Th.round(4).tolist(), "on": st.on.astype(int).tolist(),
                            "lockout": st.lockout.tolist()})
    metrics = trace_metrics(Trace(P, s, temp_err, N), warmup)
    metrics["diverged"] = env.state.diverged
    return records, metrics


@dataclass
class MetricsReport:
    controller: str
    seeds: list
    per_seed: list = field(default_factory=list)

    def _values(self, key):
        return np.array([m[key] for m in self.per_seed], dtype=float)

    def mean(self, key) -> float:
        return float(self._values(key).mean())

    def std(self, key) -> float:
        """Sample standard deviation (n - 1 denominator); 0 for a single seed."""
        v = self._values(key)
        return float(v.std(ddof=1)) if len(v) > 1 else 0.0

    def summary(self) -> dict:
        out = {"controller": self.controller, "n_seeds": len(self.seeds)}
        for key in ("signal_rmse", "temp_rmse", "max_temp_rmse"):
            out[f"{key}_mean"] = self.mean(key)
            out[f"{key}_std"] = self.std(key)
        return out


def _evaluate_one(args):
    factory, env_config, seed, horizon, warmup, table = args
    env = FleetEnv(env_config, table)
    _, m = run_episode(factory(), env_config, seed=seed, horizon=horizon, warmup=warmup, env=env)
    return m


def evaluate(controller_factory, env_config: EnvConfig, seeds, horizon: int = DEFAULT_HORIZON,
             warmup: int = DEFAULT_WARMUP, jobs: int = 1, name: str | None = None, table=None) -> MetricsReport:
    """Evaluate a controller on several environment seeds.

    ``controller_factory`` is a zero-argument callable returning a fresh
    controller (must be picklable when ``jobs > 1``). Per-seed results do not
    depend on ``jobs``.
    """
    seeds = list(seeds)
    args = [(controller_factory, env_config, s, horizon, warmup, table) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            per_seed = list(ex.map(_evaluate_one, args))
    else:
        per_seed = [_evaluate_one(a) for a in args]
    if name is None:
        name = getattr(controller_factory(), "name", "controller")
    for s, m in zip(seeds, per_seed):
        m["seed"] = s
    return MetricsReport(name, seeds, per_seed)
