"""INI experiment configuration.

Three sections, all optional; unknown keys are rejected so typos surface early.

``[environment]``
    N, Nc, dt, target, lmax, Ka, outdoor_shift, init_sigma, alpha_temp,
    alpha_sig, p_d, day_of_year, start_time, beta_p, signal_mean_factor,
    noise_amplitude_factor, noise_frequency_factor, thermal_std_frac,
    ka_choices, lmax_choices (comma lists), solar (bool), seed,
    obs_temperatures (absolute | offset), offset_scale
``[agent]``
    controller (bbc | greedy | greedy-available | mpc | checkpoint), checkpoint,
    Nc_de, algorithm (ppo-he | ppo-nc | tarmac | dqn), epochs, episodes,
    episode_steps, lr, minibatch, updates, gamma, gae_lambda, random_start,
    lr_final_factor, validate_every, mpc_horizon
``[experiment]``
    horizon, warmup, seeds (``1..10`` or ``1,2,5``), jobs, sizes, p_d_values,
    table
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .. import ConfigError
from ..env import EnvConfig, Heterogeneity
from ..signal import SignalConfig

ENV_KEYS = {
    "N": int, "Nc": int, "dt": float, "target": float, "lmax": float, "Ka": float, "outdoor_shift": float,
    "init_sigma": float, "alpha_temp": float, "alpha_sig": float, "p_d": float, "day_of_year": int,
    "start_time": float, "beta_p": float, "signal_mean_factor": float, "noise_amplitude_factor": float,
    "noise_frequency_factor": float, "thermal_std_frac": float, "ka_choices": "floats",
    "lmax_choices": "floats", "solar": bool, "seed": int, "obs_temperatures": str, "offset_scale": float,
}
AGENT_KEYS = {
    "controller": str, "checkpoint": str, "Nc_de": int, "algorithm": str, "epochs": int, "episodes": int,
    "episode_steps": int, "lr": float, "minibatch": int, "updates": int, "gamma": float, "gae_lambda": float,
    "random_start": bool, "lr_final_factor": float, "validate_every": int,
    "mpc_horizon": int,
}
EXPERIMENT_KEYS = {
    "horizon": int, "warmup": int, "seeds": "seeds", "jobs": int, "sizes": "ints", "p_d_values": "floats",
    "table": str,
}
CONTROLLERS = ("bbc", "greedy", "greedy-available", "mpc", "checkpoint")
ALGORITHMS = ("ppo-he", "ppo-nc", "tarmac", "dqn")


def parse_seeds(text: str) -> list[int]:
    """``"1..10"`` (inclusive range), ``"3"`` or ``"1,4,9"``."""
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ConfigError(f"empty seed range {text!r}")
            return list(range(lo, hi + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad seed list {text!r}") from exc


def _convert(kind, raw: str, key: str):
    try:
        if kind is bool:
            if raw.strip().lower() in ("1", "true", "yes", "on"):
                return True
            if raw.strip().lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "floats":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind == "ints":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind == "seeds":
            return parse_seeds(raw)
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def _section(parser, name: str, schema: dict) -> dict:
    if not parser.has_section(name):
        return {}
    out = {}
    for key, raw in parser.items(name):
        # configparser lower-cases keys; map back to the schema spelling
        match = next((k for k in schema if k.lower() == key), None)
        if match is None:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        out[match] = _convert(schema[match], raw, match)
    return out


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: dict = field(default_factory=dict)
    horizon: int = 43200
    warmup: int = 5000
    seeds: list = field(default_factory=lambda: [1])
    jobs: int = 1
    sizes: tuple = (10, 50, 250, 1000)
    p_d_values: tuple = (0.0, 0.1, 0.5)
    table: str | None = None

    @property
    def controller(self) -> str:
        return self.agent.get("controller", "checkpoint" if "checkpoint" in self.agent else "bbc")


def mpc_preset(env: EnvConfig | None = None, seeds=(1,)) -> ExperimentConfig:
    """Short-window protocol for the exact MPC: 2-hour runs (1800 steps), houses start near target."""
    env = (env or EnvConfig()).with_(init_sigma=0.05)
    return ExperimentConfig(env=env, agent={"controller": "mpc"}, horizon=1800, warmup=0, seeds=list(seeds))


def build_env_config(values: dict) -> EnvConfig:
    cfg = EnvConfig()
    simple = {k: values[k] for k in ("N", "Nc", "dt", "target", "outdoor_shift", "init_sigma", "alpha_temp",
                                     "alpha_sig", "p_d", "day_of_year", "start_time", "seed", "obs_temperatures",
                                     "offset_scale") if k in values}
    if "N" in simple and "Nc" not in simple:
        simple["Nc"] = min(cfg.Nc, simple["N"] - 1)
    cfg = replace(cfg, **simple)
    if "lmax" in values or "Ka" in values:
        cfg = replace(cfg, ac=replace(cfg.ac, **{k: values[k] for k in ("lmax", "Ka") if k in values}))
    het = Heterogeneity(values.get("thermal_std_frac", 0.0), values.get("ka_choices", ()), values.get("lmax_choices", ()))
    cfg = replace(cfg, heterogeneity=het)
    sig = cfg.signal
    perlin = replace(sig.perlin, frequency_factor=values.get("noise_frequency_factor", 1.0))
    beta_p = values.get("beta_p", sig.beta_p) * values.get("noise_amplitude_factor", 1.0)
    cfg = replace(cfg, signal=SignalConfig(perlin, beta_p, values.get("signal_mean_factor", 1.0)))
    if values.get("solar"):
        from .robustness import DEMO_SOLAR

        cfg = replace(cfg, solar=DEMO_SOLAR)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    extra = set(parser.sections()) - {"environment", "agent", "experiment"}
    if extra:
        raise ConfigError(f"unknown section(s): {sorted(extra)}")
    try:
        env = build_env_config(_section(parser, "environment", ENV_KEYS))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    agent = _section(parser, "agent", AGENT_KEYS)
    if agent.get("controller", "bbc") not in CONTROLLERS:
        raise ConfigError(f"unknown controller {agent['controller']!r}; expected one of {CONTROLLERS}")
    if agent.get("algorithm", "ppo-he") not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {agent['algorithm']!r}; expected one of {ALGORITHMS}")
    exp = _section(parser, "experiment", EXPERIMENT_KEYS)
    out = ExperimentConfig(env=env, agent=agent, **exp)
    if out.warmup < 0 or out.horizon <= out.warmup:
        raise ConfigError("need 0 <= warmup < horizon")
    return out


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())
