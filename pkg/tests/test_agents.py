import numpy as np
import pytest

from acfleet.agents.deploy import LearnedController, deploy, env_config_for
from acfleet.agents.dqn import DqnConfig, ReplayBuffer, dqn_train, epsilon_greedy
from acfleet.agents.policies import IncompatibleCheckpoint, MlpPolicy, TarmacActor, tarmac_forward
from acfleet.agents.ppo import PpoConfig, PpoLearner, discounted_returns, lambda_returns, ppo_train
from acfleet.env import EnvConfig, FleetEnv, neighbour_mask

TINY_PPO = dict(epochs=2, episode_steps=80, minibatch=64, updates=2)


class TestReturns:
    def test_single_step(self):
        assert discounted_returns(np.array([[-0.7, -0.1]]), 0.9).tolist() == [[-0.7, -0.1]]

    def test_discounting(self):
        G = discounted_returns(np.array([[1.0], [1.0], [1.0]]), 0.5)
        assert G[:, 0].tolist() == [1.75, 1.5, 1.0]

    def test_lambda_one_is_monte_carlo(self):
        rng = np.random.default_rng(0)
        r = rng.normal(size=(20, 3))
        V = np.vstack([rng.normal(size=(20, 3)), np.zeros((1, 3))])
        assert np.allclose(lambda_returns(r, V, 0.9, 1.0), discounted_returns(r, 0.9))

    def test_lambda_zero_is_td_target(self):
        rng = np.random.default_rng(1)
        r = rng.normal(size=(10, 2))
        V = rng.normal(size=(11, 2))
        assert np.allclose(lambda_returns(r, V, 0.9, 0.0), r + 0.9 * V[1:])


class TestPolicies:
    def test_single_neighbour_gets_full_attention(self):
        actor = TarmacActor(7, 8, 4, 3, rng=np.random.default_rng(0))
        obs = np.random.default_rng(1).normal(size=(1, 3, 7))
        mask = np.zeros((1, 3, 3), bool)
        mask[0, 0, 2] = True
        _, cache = actor.forward(obs, mask)
        att = cache[3][0][-1]
        assert att[0, 0].tolist() == [0.0, 0.0, 1.0]
        assert np.all(att[0, 1] == 0.0)  # no neighbours: zero communication

    def test_tarmac_permutation_equivariance(self):
        actor = TarmacActor(rng=np.random.default_rng(0))
        obs = np.tile(np.random.default_rng(2).normal(size=7), (6, 1))
        p = tarmac_forward(actor, obs, neighbour_mask(6, 2))
        assert np.allclose(p, p[0], atol=1e-14)

    def test_he_identical_inputs_identical_actions(self):
        pol = MlpPolicy(13, 2, rng=np.random.default_rng(0))
        x = np.tile(np.random.default_rng(1).normal(size=13), (4, 1))
        lg = pol.logits(x)
        assert np.all(lg == lg[0])

    def test_faulty_comms_only_shrink_support(self):
        actor = TarmacActor(rng=np.random.default_rng(0))
        obs = np.random.default_rng(3).normal(size=(8, 7))
        p = tarmac_forward(actor, obs, neighbour_mask(8, 4), p_d=1.0, rng=np.random.default_rng(0))
        q = tarmac_forward(actor, obs, np.zeros((8, 8), bool))
        assert np.allclose(p, q)


class TestPpo:
    @pytest.mark.parametrize("mode", ["he", "nc", "tarmac"])
    def test_training_runs_and_is_deterministic(self, mode, tmp_path):
        cfg = EnvConfig(N=4, Nc=2)
        a = ppo_train(cfg, PpoConfig(**TINY_PPO), mode, log_path=tmp_path / "log.jsonl")
        b = ppo_train(cfg, PpoConfig(**TINY_PPO), mode)
        assert all(np.array_equal(a.blocks[k], b.blocks[k]) for k in a.blocks)
        assert len((tmp_path / "log.jsonl").read_text().splitlines()) == 2
        assert a.metadata["algorithm"] == f"ppo-{mode}"
        assert a.metadata["return_scale"] > 0

    def test_gae_variant_runs(self):
        ck = ppo_train(EnvConfig(N=3, Nc=2), PpoConfig(gae_lambda=0.95, **TINY_PPO), "he")
        assert all(np.all(np.isfinite(v)) for v in ck.blocks.values())

    def test_validation_keeps_best_epoch(self, tmp_path):
        cfg = EnvConfig(N=3, Nc=2)
        seen = []
        ppo = PpoConfig(epochs=4, episode_steps=80, minibatch=64, updates=2, validate_every=1,
                        validation_steps=60, validation_warmup=20)
        ck = ppo_train(cfg, ppo, "he", log_path=tmp_path / "log.jsonl",
                       callback=lambda learner, rec: seen.append(rec["validation"]["score"]))
        assert len(seen) == 4
        assert ck.metadata["selected_epoch"] == int(np.argmin(seen))
        assert ck.metadata["validation_score"] == min(seen)
        # the returned policy reproduces its validation score
        learner = PpoLearner(cfg, ppo, "he")
        for p, k in zip(learner.actor.params, [k for k in ck.blocks if not k.startswith("critic")]):
            p[...] = ck.blocks[k]
        val = learner.validate(FleetEnv(cfg), 60, 20, seed=10**9)
        assert val["signal_rmse"] + 1e4 * max(0.0, val["max_temp_rmse"] - 0.4) == pytest.approx(min(seen))

    def test_lr_decays_linearly(self):
        cfg = EnvConfig(N=3, Nc=2)
        lrs = []
        ppo_train(cfg, PpoConfig(lr_final_factor=0.1, **TINY_PPO), "he",
                  callback=lambda learner, rec: lrs.append(learner.actor_opt.state.lr))
        assert lrs == pytest.approx([1e-3, 1e-4])

    def test_first_update_starts_on_policy(self):
        cfg = EnvConfig(N=3, Nc=2)
        learner = PpoLearner(cfg, PpoConfig(**TINY_PPO), "he")
        ro = learner.rollout(FleetEnv(cfg), 40, seed=0, start_time=0.0)
        ro["returns"] = discounted_returns(ro["rewards"], 0.99)
        stats = learner.update(ro)
        assert stats["first_ratio_dev"] < 1e-12

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            PpoLearner(EnvConfig(N=3, Nc=2), PpoConfig(), "a3c")


class TestDqn:
    def test_uniform_exploration(self):
        rng = np.random.default_rng(0)
        a = epsilon_greedy(np.tile([[5.0, -5.0]], (2000, 1)), 1.0, rng)
        ones = a.sum()
        chi2 = (ones - 1000) ** 2 / 1000 + (1000 - ones) ** 2 / 1000
        assert chi2 < 6.63  # p > 0.01 with one degree of freedom

    def test_greedy_without_exploration(self):
        a = epsilon_greedy(np.array([[1.0, 2.0], [3.0, 0.0]]), 0.0, np.random.default_rng(0))
        assert a.tolist() == [1, 0]

    def test_replay_ring(self):
        buf = ReplayBuffer(3, 2)
        for k in range(5):
            buf.add_batch(np.full((1, 2), k), [k % 2], [float(k)], np.zeros((1, 2)))
        assert len(buf) == 3 and sorted(buf.rewards.tolist()) == [2.0, 3.0, 4.0]

    def test_training_runs(self):
        ck = dqn_train(EnvConfig(N=3, Nc=2), DqnConfig(episodes=2, episode_steps=60, minibatch=32))
        ctrl = LearnedController(ck)
        env = FleetEnv(EnvConfig(N=3, Nc=2))
        env.reset(seed=0)
        ctrl.reset(env)
        assert ctrl.act(env).shape == (3,)

    def test_requires_messages(self):
        with pytest.raises(ValueError):
            dqn_train(EnvConfig(N=3, Nc=0), DqnConfig(episodes=1, episode_steps=5))


@pytest.fixture(scope="module")
def checkpoints():
    cfg = EnvConfig(N=4, Nc=2)
    return {m: ppo_train(cfg, PpoConfig(**TINY_PPO), m) for m in ("he", "tarmac")}


class TestDeploy:
    def test_he_requires_training_neighbour_count(self, checkpoints):
        env = FleetEnv(EnvConfig(N=10, Nc=4))
        env.reset(seed=0)
        with pytest.raises(IncompatibleCheckpoint):
            LearnedController(checkpoints["he"]).reset(env)

    def test_he_scales_to_more_agents(self, checkpoints):
        _, m = deploy(checkpoints["he"], EnvConfig(N=20, Nc=2), horizon=30, warmup=0, seed=1)
        assert np.isfinite(m["signal_rmse"])

    def test_tarmac_accepts_other_neighbour_counts(self, checkpoints):
        _, m = deploy(checkpoints["tarmac"], EnvConfig(N=12, Nc=6), horizon=30, warmup=0, seed=1)
        assert np.isfinite(m["signal_rmse"])

    def test_observation_scaling_must_match(self):
        cfg = EnvConfig(N=4, Nc=2, obs_temperatures="offset")
        ck = ppo_train(cfg, PpoConfig(**TINY_PPO), "he")
        env = FleetEnv(EnvConfig(N=4, Nc=2))
        env.reset(seed=0)
        with pytest.raises(IncompatibleCheckpoint):
            LearnedController(ck).reset(env)
        assert env_config_for(ck, EnvConfig(N=6, Nc=2)).obs_temperatures == "offset"
        _, m = deploy(ck, EnvConfig(N=6, Nc=2), horizon=20, warmup=0)
        assert np.isfinite(m["signal_rmse"])
