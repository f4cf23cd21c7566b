"""Multi-agent DQN with a shared Q-network and a shared replay buffer."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from ..env import EnvConfig, FleetEnv
from ..neural import Adam, Checkpoint, bellman_targets, clip_grad_norm, dqn_loss
from .policies import QNetwork, he_input_size
from .ppo import DivergenceDetected


@dataclass
class DqnConfig:
    episodes: int = 200
    episode_steps: int = 16000
    lr: float = 1e-4
    minibatch: int = 256
    gamma: float = 0.99
    buffer_capacity: int = 65536
    epsilon_start: float = 1.0
    epsilon_decay: float = 0.995
    epsilon_min: float = 0.01
    target_update_period: int = 0  # 0: bootstrap from the online network
    train_every: int = 1
    max_grad_norm: float = 0.0
    random_start: bool = True
    seed: int = 0


class ReplayBuffer:
    """Fixed-capacity ring buffer; minibatches are drawn uniformly without replacement."""

    def __init__(self, capacity: int, obs_size: int, rng=None):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_size))
        self.next_obs = np.zeros((capacity, obs_size))
        self.actions = np.zeros(capacity, dtype=int)
        self.rewards = np.zeros(capacity)
        self.size = 0
        self.pos = 0
        self.rng = np.random.default_rng(0) if rng is None else rng

    def __len__(self):
        return self.size

    def add_batch(self, obs, actions, rewards, next_obs) -> None:
        for k in range(len(actions)):
            i = self.pos
            self.obs[i] = obs[k]
            self.actions[i] = actions[k]
            self.rewards[i] = rewards[k]
            self.next_obs[i] = next_obs[k]
            self.pos = (self.pos + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int):
        idx = self.rng.choice(self.size, size=min(n, self.size), replace=False)
        return self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx]


def epsilon_greedy(q_values: np.ndarray, epsilon: float, rng) -> np.ndarray:
    greedy = np.argmax(q_values, axis=1)
    explore = rng.random(len(greedy)) < epsilon
    return np.where(explore, rng.integers(0, q_values.shape[1], len(greedy)), greedy)


def dqn_train(env_config: EnvConfig, config: DqnConfig = DqnConfig(), log_path=None) -> Checkpoint:
    """Train a shared Q-network on hand-engineered augmented observations."""
    if env_config.Nc < 1:
        raise ValueError("MA-DQN uses hand-engineered messages; need Nc >= 1")
    ss = np.random.SeedSequence([config.seed, 7])
    net_ss, buf_ss, act_ss, start_ss = ss.spawn(4)
    in_size = he_input_size(env_config.Nc)
    qnet = QNetwork(in_size, env_config.Nc, rng=np.random.default_rng(net_ss))
    target = [p.copy() for p in qnet.params] if config.target_update_period else None
    opt = Adam(qnet.params, lr=config.lr)
    buf = ReplayBuffer(config.buffer_capacity, in_size, np.random.default_rng(buf_ss))
    rng = np.random.default_rng(act_ss)
    start_rng = np.random.default_rng(start_ss)
    env = FleetEnv(env_config)
    eps = config.epsilon_start
    step_count = 0
    history = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        for ep in range(config.episodes):
            start = float(start_rng.integers(0, int(86400 / env_config.dt))) * env_config.dt if config.random_start else 0.0
            env.reset(seed=env_config.seed * 100003 + ep, start_time=start)
            obs = env.augmented_observations()
            total, losses = 0.0, []
            for _ in range(config.episode_steps):
                a = epsilon_greedy(qnet.logits(obs), eps, rng)
                _, r, _ = env.step(a.astype(bool))
                nxt = env.augmented_observations()
                buf.add_batch(obs, a, r, nxt)
                total += float(r.mean())
                obs = nxt
                step_count += 1
                if len(buf) >= config.minibatch and step_count % config.train_every == 0:
                    o, act, rew, o2 = buf.sample(config.minibatch)
                    if target is None:
                        next_q = qnet.logits(o2)
                    else:
                        live = qnet.net.params
                        qnet.net.params = target
                        next_q = qnet.logits(o2)
                        qnet.net.params = live
                    y = bellman_targets(rew, next_q, config.gamma)
                    q, cache = qnet.net.forward(o)
                    loss, dq = dqn_loss(q, act, y)
                    if not np.isfinite(loss) or loss > 1e6:
                        raise DivergenceDetected(f"DQN loss {loss}")
                    grads, _ = qnet.net.backward(cache, dq)
                    if config.max_grad_norm:
                        clip_grad_norm(grads, config.max_grad_norm)
                    opt.step(grads)
                    losses.append(loss)
                    if target is not None and step_count % config.target_update_period == 0:
                        target = [p.copy() for p in qnet.params]
            eps = max(config.epsilon_min, eps * config.epsilon_decay)
            record = {"episode": ep, "mean_reward": total / config.episode_steps,
                      "loss": float(np.mean(losses)) if losses else None, "epsilon": eps}
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
    finally:
        if log_fh:
            log_fh.close()
    arch = qnet.arch()
    arch["n_train"] = env_config.N
    arch["Nc_train"] = env_config.Nc
    arch["normalization"] = env_config.normalization()
    return Checkpoint(arch, qnet.blocks(), {"algorithm": "dqn", "config": asdict(config), "history_tail": history[-5:]})
