"""Decentralised execution of trained policies."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..neural import Checkpoint
from .policies import IncompatibleCheckpoint, MlpPolicy, QNetwork, TarmacActor


TEMPERATURE_SCALING_KEYS = ("obs_temperatures", "temp_scale", "offset_scale")


def _as_checkpoint(checkpoint) -> Checkpoint:
    return checkpoint if isinstance(checkpoint, Checkpoint) else Checkpoint.load(Path(checkpoint))


def checkpoint_scaling(checkpoint) -> dict:
    """Temperature normalisation the policy was trained with (older checkpoints: absolute /30)."""
    norm = _as_checkpoint(checkpoint).arch.get("normalization", {})
    return {"obs_temperatures": norm.get("obs_temperatures", "absolute"),
            "temp_scale": norm.get("temp_scale", 30.0),
            "offset_scale": norm.get("offset_scale", 1.0)}


def env_config_for(checkpoint, env_config):
    """``env_config`` with the checkpoint's observation scaling applied."""
    return env_config.with_(**checkpoint_scaling(checkpoint))


def load_policy(checkpoint):
    ck = _as_checkpoint(checkpoint)
    kind = ck.arch["kind"]
    if kind == "tarmac":
        return TarmacActor.from_checkpoint(ck)
    if kind == "dqn":
        pol = QNetwork.__new__(QNetwork)
        base = MlpPolicy.from_checkpoint(ck)
        pol.__dict__.update(base.__dict__)
        return pol
    if kind in ("he", "nc"):
        return MlpPolicy.from_checkpoint(ck)
    raise IncompatibleCheckpoint(f"unknown policy kind {kind!r}")


class LearnedController:
    """Runs a shared policy on every agent using only local inputs.

    HE policies consume exactly ``Nc_train`` neighbour messages; attention
    policies accept any neighbour count; NC policies ignore messages.
    """

    decentralized = True

    def __init__(self, checkpoint, Nc_de: int | None = None, p_d: float | None = None, greedy: bool = True, seed: int = 0):
        checkpoint = _as_checkpoint(checkpoint)
        self.scaling = checkpoint_scaling(checkpoint)
        self.policy = load_policy(checkpoint)
        self.kind = self.policy.kind
        self.Nc_de = Nc_de
        self.p_d = p_d
        self.greedy = greedy
        self.name = {"he": "ma-ppo-he", "nc": "ma-ppo-nc", "tarmac": "tarmac-ppo", "dqn": "ma-dqn"}[self.kind]
        self.rng = np.random.default_rng(seed)

    def reset(self, env):
        for key, value in self.scaling.items():
            if getattr(env.config, key) != value:
                raise IncompatibleCheckpoint(
                    f"policy was trained with {key}={value!r}, environment uses {getattr(env.config, key)!r}")
        Nc = env.config.Nc if self.Nc_de is None else self.Nc_de
        if self.kind in ("he", "dqn") and Nc != self.policy.Nc:
            raise IncompatibleCheckpoint(
                f"hand-engineered messages need Nc_de == Nc_tr ({self.policy.Nc}), got {Nc}")
        if Nc >= env.config.N:
            raise IncompatibleCheckpoint(f"Nc_de={Nc} needs at least {Nc + 1} houses")
        self._Nc = Nc

    def logits(self, env) -> np.ndarray:
        if self.kind == "tarmac":
            mask = env.comm_mask(self.p_d, self._Nc)
            return self.policy.logits(env.normalized_observations(), mask)[0]
        if self.kind == "nc":
            return self.policy.logits(env.normalized_observations())
        return self.policy.logits(env.augmented_observations(self.p_d, self._Nc))

    def act(self, env) -> np.ndarray:
        lg = self.logits(env)
        if self.greedy:
            return lg[:, 1] > lg[:, 0]
        p_on = 1.0 / (1.0 + np.exp(lg[:, 0] - lg[:, 1]))
        return self.rng.random(len(p_on)) < p_on


def deploy(checkpoint, env_config, Nc_de: int | None = None, p_d: float | None = None, horizon: int = 43200,
           warmup: int = 5000, seed: int | None = None, record_stride: int = 0):
    """Roll out a checkpoint greedily; returns (trajectory records, metrics dict)."""
    from ..bench.metrics import run_episode

    ctrl = LearnedController(checkpoint, Nc_de=Nc_de, p_d=p_d)
    env_config = env_config_for(checkpoint, env_config)
    return run_episode(ctrl, env_config, seed=env_config.seed if seed is None else seed,
                       horizon=horizon, warmup=warmup, record_stride=record_stride)
