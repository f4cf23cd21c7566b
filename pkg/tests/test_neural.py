import numpy as np
import pytest

from acfleet.neural import (
    Adam,
    AdamState,
    AllMasked,
    Checkpoint,
    Mlp,
    ShapeMismatch,
    adam_step,
    bellman_targets,
    clip_grad_norm,
    dqn_loss,
    mlp_blocks,
    mlp_from_blocks,
    ppo_clip_loss,
    softmax_masked,
)

from helpers import gradient_suite


class TestMlp:
    def test_identity_layer(self):
        net = Mlp([3, 3], out_activation=None)
        net.params = [np.eye(3), np.zeros(3)]
        x = np.array([[1.0, -2.0, 3.0]])
        assert np.array_equal(net(x), x)

    def test_relu_negative_preactivations(self):
        net = Mlp([2, 4, 1], "relu")
        net.params[0][:] = -1.0
        h = net.forward(np.ones((1, 2)))[1][1]
        assert np.all(h == 0.0)

    def test_batch_independence(self):
        net = Mlp([5, 8, 2], "tanh", rng=np.random.default_rng(1))
        x = np.random.default_rng(2).normal(size=(2, 5))
        both = net(x)
        assert np.allclose(both, np.vstack([net(x[:1]), net(x[1:])]), atol=1e-15)

    def test_linear_weight_gradient_is_outer_product(self):
        net = Mlp([3, 2], out_activation=None)
        x = np.array([[1.0, 2.0, 3.0]])
        grads, _ = net.backward(net.forward(x)[1], np.ones((1, 2)))
        assert np.array_equal(grads[0], np.outer(x[0], np.ones(2)))
        assert np.array_equal(grads[1], np.ones(2))

    def test_zero_upstream_zero_gradient(self):
        net = Mlp([4, 6, 2], rng=np.random.default_rng(0))
        grads, dx = net.backward(net.forward(np.ones((3, 4)))[1], np.zeros((3, 2)))
        assert all(np.all(g == 0) for g in grads) and np.all(dx == 0)

    def test_shape_mismatch(self):
        net = Mlp([4, 2])
        with pytest.raises(ShapeMismatch):
            net(np.ones((1, 3)))
        with pytest.raises(ShapeMismatch):
            net.backward(net.forward(np.ones((1, 4)))[1], np.ones((2, 2)))

    def test_zero_biases_at_init(self):
        net = Mlp([4, 6, 2], rng=np.random.default_rng(0))
        assert all(np.all(b == 0) for b in net.params[1::2])


def test_finite_difference_suite():
    errors = gradient_suite(seed=3)
    assert max(errors.values()) < 1e-4, errors


class TestSoftmax:
    def test_single_unmasked(self):
        p = softmax_masked(np.array([[3.0, -1.0, 7.0]]), np.array([[False, True, False]]))
        assert p.tolist() == [[0.0, 1.0, 0.0]]

    def test_equal_logits(self):
        p = softmax_masked(np.zeros((1, 5)), np.array([[True, True, False, True, False]]))
        assert np.allclose(p, [[1 / 3, 1 / 3, 0, 1 / 3, 0]])

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(0, 50, size=(1000, 6))
        mask = rng.random((1000, 6)) < 0.5
        mask[np.arange(1000), rng.integers(0, 6, 1000)] = True
        p = softmax_masked(logits, mask)
        assert np.all(np.abs(p.sum(axis=1) - 1.0) < 1e-12)
        assert np.all(p[~mask] == 0.0)

    def test_all_masked(self):
        with pytest.raises(AllMasked):
            softmax_masked(np.zeros((2, 3)), np.array([[True, False, False], [False, False, False]]))


class TestLosses:
    def test_clip_upper(self):
        logits = np.log(np.array([[0.25, 0.75]]))
        loss, _, ratio = ppo_clip_loss(logits, [1], np.log([0.5]), np.array([1.0]), 0.2)
        assert ratio[0] == pytest.approx(1.5)
        assert loss == pytest.approx(-1.2)

    def test_clip_asymmetry(self):
        logits = np.log(np.array([[0.75, 0.25]]))
        loss, _, ratio = ppo_clip_loss(logits, [1], np.log([0.5]), np.array([-1.0]), 0.2)
        assert ratio[0] == pytest.approx(0.5)
        assert loss == pytest.approx(0.8)  # min(-0.5, -0.8) = -0.8

    def test_bellman_example(self):
        t = bellman_targets(np.array([-0.5]), np.array([[-10.0, -12.0]]), 0.99)
        assert t[0] == pytest.approx(-10.4)

    def test_bellman_zero_discount(self):
        r = np.array([-1.0, -2.0])
        assert np.array_equal(bellman_targets(r, np.ones((2, 2)) * 5, 0.0), r)

    def test_dqn_loss_only_chosen_action(self):
        _, dq = dqn_loss(np.zeros((2, 2)), np.array([0, 1]), np.array([0.5, -0.5]))
        assert dq[0, 1] == 0 and dq[1, 0] == 0 and dq[0, 0] != 0

    def test_grad_clipping(self):
        g = [np.full(4, 3.0)]
        norm = clip_grad_norm(g, 0.5)
        assert norm == pytest.approx(6.0)
        assert np.linalg.norm(g[0]) == pytest.approx(0.5)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = [np.array([1.0, 2.0])]
        Adam(p).step([np.zeros(2)])
        assert p[0].tolist() == [1.0, 2.0]

    def test_first_step_magnitude(self):
        x = [np.array([1.0])]
        st = AdamState.zeros_like(x, lr=0.001)
        adam_step(x, [2 * x[0]], st)
        assert 1.0 - x[0][0] == pytest.approx(0.001, rel=1e-4)

    def test_deterministic(self):
        def run():
            x = [np.array([1.0, -3.0])]
            opt = Adam(x, lr=0.01)
            for _ in range(50):
                opt.step([2 * x[0]])
            return x[0]
        assert np.array_equal(run(), run())


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        net = Mlp([4, 8, 2], rng=np.random.default_rng(0))
        ck = Checkpoint({"actor": net.descriptor()}, mlp_blocks("actor", net), {"note": "x"})
        ck.save(tmp_path / "a.acck")
        back = Checkpoint.load(tmp_path / "a.acck")
        assert back.metadata == {"note": "x"}
        restored = mlp_from_blocks("actor", back.arch["actor"], back.blocks)
        x = np.random.default_rng(1).normal(size=(3, 4))
        assert np.array_equal(restored(x), net(x))
        assert (tmp_path / "a.acck").read_bytes()[:4] == b"ACCK"

    def test_rejects_foreign_file(self, tmp_path):
        (tmp_path / "b.acck").write_bytes(b"XXXX" + bytes(8))
        with pytest.raises(ValueError):
            Checkpoint.load(tmp_path / "b.acck")
