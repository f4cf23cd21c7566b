"""Shared generators for tests."""

import numpy as np

from acfleet.baselines import MpcProblem
from acfleet.thermal import ThermalParams


def random_mpc_problem(rng: np.random.Generator, N: int, H: int) -> MpcProblem:
    """Small MPC instance with random temperatures, AC states and signal."""
    dt = 12.0
    lmax = float(rng.choice([0.0, 12.0, 24.0, 36.0]))
    on0 = rng.random(N) < 0.5
    lockout0 = np.where(on0, 0.0, rng.choice([0.0, 12.0, 24.0], N))
    lockout0 = np.minimum(lockout0, lmax)
    return MpcProblem(
        Th0=20.0 + rng.normal(0.0, 0.6, N), Tm0=20.0 + rng.normal(0.0, 0.6, N), on0=on0, lockout0=lockout0,
        power=np.full(N, 6000.0), heat=np.full(N, -15000.0 / 1.35), params=ThermalParams(),
        To=float(rng.uniform(28, 34)), target=20.0, s0=float(rng.uniform(0, 6000.0 * N)),
        horizon=H, dt=dt, lmax=lmax,
    )


def max_gradient_error(loss_fn, params: list, grads: list, probes: int = 100, seed: int = 0) -> float:
    """Largest relative error between analytic ``grads`` and central differences of ``loss_fn``."""
    from acfleet.neural import numerical_gradient, relative_error

    numeric = numerical_gradient(loss_fn, params, eps=1e-5, probes=probes, rng=np.random.default_rng(seed))
    return max(relative_error(grads[k].reshape(-1)[j], g, floor=1e-7) for k, j, g in numeric)


def gradient_suite(seed: int = 0) -> dict:
    """Finite-difference relative errors for every differentiable composite used in training."""
    from acfleet.agents.policies import TarmacActor
    from acfleet.neural import Mlp, dqn_loss, log_softmax, mse_loss, ppo_clip_loss

    rng = np.random.default_rng(seed)
    out = {}
    for act in ("relu", "tanh"):
        net = Mlp([7, 16, 16, 2], act, None, rng=rng)
        x = rng.normal(size=(5, 7))
        up = rng.normal(size=(5, 2))
        grads, _ = net.backward(net.forward(x)[1], up)
        out[f"mlp_{act}"] = max_gradient_error(lambda: float((net(x) * up).sum()), net.params, grads)

    actor = TarmacActor(7, 12, 4, 5, rounds=2, rng=rng)
    obs = rng.normal(size=(2, 6, 7))
    mask = rng.random((2, 6, 6)) < 0.6
    mask[0, 1] = False  # an agent that hears nobody
    up = rng.normal(size=(2, 6, 2))
    grads = actor.backward(actor.forward(obs, mask)[1], up)
    out["masked_attention"] = max_gradient_error(
        lambda: float((actor.logits(obs, mask) * up).sum()), actor.params, grads, probes=200)

    logits = rng.normal(size=(64, 2))
    actions = rng.integers(0, 2, 64)
    adv = rng.normal(size=64)
    logp_old = log_softmax(logits)[np.arange(64), actions] + rng.normal(0, 0.3, 64)
    _, dlogits, _ = ppo_clip_loss(logits, actions, logp_old, adv, 0.2)
    out["ppo_clip"] = max_gradient_error(lambda: ppo_clip_loss(logits, actions, logp_old, adv, 0.2)[0],
                                         [logits], [dlogits], probes=None)

    q = rng.normal(size=(32, 2)) * 2.0
    a = rng.integers(0, 2, 32)
    targets = rng.normal(size=32) * 2.0
    _, dq = dqn_loss(q, a, targets)
    out["dqn_huber"] = max_gradient_error(lambda: dqn_loss(q, a, targets)[0], [q], [dq], probes=None)

    pred = rng.normal(size=(16, 3))
    target = rng.normal(size=(16, 3))
    _, dpred = mse_loss(pred, target)
    out["mse"] = max_gradient_error(lambda: mse_loss(pred, target)[0], [pred], [dpred], probes=None)
    return out


SMALL_CONFIG = """
[environment]
N = 4
Nc = 2
init_sigma = 0.5

[agent]
controller = greedy
episode_steps = 60

[experiment]
horizon = 150
warmup = 30
seeds = 1..2
"""


def cli_invocations(config_path, checkpoint_path) -> dict:
    """One small argv per subcommand (checkpoint-based ones use ``checkpoint_path``)."""
    c = ["--config", str(config_path)]
    return {
        "gen-table": ["gen-table", "--coarse", "--validate", "20", *c],
        "simulate": ["simulate", "--record-stride", "10", *c],
        "train": ["train", "--agent", "ppo-he", "--episodes", "2", *c],
        "evaluate": ["evaluate", "--checkpoint", str(checkpoint_path), *c],
        "scaling": ["scaling", "--sizes", "4,8", *c],
        "robustness": ["robustness", "--controller", "bbc", "--horizon", "60", *c],
        "timing": ["timing", "--controller", "bbc", "--controller", "greedy", "--sizes", "10,40", "--steps", "3", *c],
    }
