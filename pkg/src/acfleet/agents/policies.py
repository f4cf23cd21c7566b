"""Actor, critic and Q-network architectures shared by every learning controller."""

from __future__ import annotations

import numpy as np

from ..env import MESSAGE_SIZE, OBS_SIZE
from ..neural import AllMasked, Checkpoint, Mlp, ShapeMismatch, mlp_blocks, mlp_from_blocks, softmax_backward, softmax_masked

HIDDEN = 100
ACTIONS = 2


class IncompatibleCheckpoint(ValueError):
    pass


def he_input_size(Nc: int) -> int:
    return OBS_SIZE + MESSAGE_SIZE * Nc


class MlpPolicy:
    """Per-agent actor over the (possibly message-augmented) observation; shared by all agents."""

    def __init__(self, in_size: int, Nc: int, kind: str = "he", rng=None, hidden: int = HIDDEN):
        self.kind = kind
        self.Nc = Nc
        self.net = Mlp([in_size, hidden, hidden, ACTIONS], "relu", None, rng=rng, out_scale=0.01)

    @property
    def params(self):
        return self.net.params

    def logits(self, inputs: np.ndarray) -> np.ndarray:
        return self.net(inputs)

    def blocks(self) -> dict:
        return mlp_blocks("actor", self.net)

    def arch(self) -> dict:
        return {"kind": self.kind, "Nc": self.Nc, "actor": self.net.descriptor()}

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint) -> "MlpPolicy":
        pol = cls.__new__(cls)
        pol.kind = ck.arch["kind"]
        pol.Nc = ck.arch["Nc"]
        pol.net = mlp_from_blocks("actor", ck.arch["actor"], ck.blocks)
        return pol


class CentralCritic:
    """Value of every agent from the concatenation of all agents' observations."""

    def __init__(self, n_agents: int, obs_size: int = OBS_SIZE, hidden: int = HIDDEN, rng=None):
        self.n_agents = n_agents
        self.net = Mlp([n_agents * obs_size, hidden, hidden, n_agents], "relu", None, rng=rng)

    @property
    def params(self):
        return self.net.params


class QNetwork(MlpPolicy):
    """Q-values for OFF/ON over the augmented observation."""

    def __init__(self, in_size: int, Nc: int, rng=None, hidden: int = HIDDEN):
        self.kind = "dqn"
        self.Nc = Nc
        self.net = Mlp([in_size, hidden, hidden, ACTIONS], "relu", None, rng=rng)


class TarmacActor:
    """Attention-based communicating actor.

    obs -> x (obs2hidden); keys, values, queries from x (tanh MLPs); each agent
    attends over its unmasked neighbours' keys with its query and averages their
    values into a communication vector; extra rounds feed (x, comm) through a
    post-communication MLP; the actor head maps (x, comm) to action logits.
    """

    def __init__(self, obs_size: int = OBS_SIZE, hidden: int = 32, key_size: int = 8, comm_size: int = 8,
                 rounds: int = 1, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.kind = "tarmac"
        self.obs_size, self.hidden, self.key_size, self.comm_size, self.rounds = obs_size, hidden, key_size, comm_size, rounds
        self.obs2hidden = Mlp([obs_size, hidden, hidden], "relu", "relu", rng=rng)
        self.hidden2key = Mlp([hidden, hidden, key_size], "tanh", None, rng=rng)
        self.hidden2value = Mlp([hidden, hidden, comm_size], "tanh", None, rng=rng)
        self.hidden2query = Mlp([hidden, hidden, key_size], "tanh", None, rng=rng)
        self.post_comm = Mlp([hidden + comm_size, hidden, hidden], "relu", "relu", rng=rng)
        self.actor = Mlp([hidden + comm_size, hidden, ACTIONS], "relu", None, rng=rng, out_scale=0.01)

    def nets(self):
        return [("obs2hidden", self.obs2hidden), ("hidden2key", self.hidden2key),
                ("hidden2value", self.hidden2value), ("hidden2query", self.hidden2query),
                ("post_comm", self.post_comm), ("actor", self.actor)]

    @property
    def params(self):
        return [p for _, net in self.nets() for p in net.params]

    # -- forward / backward -----------------------------------------------------------------

    def _communicate(self, x, mask, B, N):
        hk, ck = self.hidden2key.forward(x)
        hv, cv = self.hidden2value.forward(x)
        hq, cq = self.hidden2query.forward(x)
        K = hk.reshape(B, N, -1)
        V = hv.reshape(B, N, -1)
        Qr = hq.reshape(B, N, -1)
        scores = np.einsum("bik,bjk->bij", Qr, K)
        has_any = mask.any(axis=-1)  # (B, N)
        safe_mask = mask | ~has_any[..., None]
        att = softmax_masked(scores, safe_mask) * has_any[..., None]
        comm = np.einsum("bij,bjc->bic", att, V).reshape(B * N, -1)
        return comm, (ck, cv, cq, K, V, Qr, att)

    def forward(self, obs: np.ndarray, mask: np.ndarray):
        """``obs`` (B, N, obs_size) or (N, obs_size); ``mask`` (N, N) or (B, N, N). Returns logits (B, N, 2)."""
        obs = np.asarray(obs, dtype=float)
        if obs.ndim == 2:
            obs = obs[None]
        B, N, d = obs.shape
        if d != self.obs_size:
            raise ShapeMismatch(f"expected obs size {self.obs_size}, got {d}")
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), (B, N, N))
        x, c_obs = self.obs2hidden.forward(obs.reshape(B * N, d))
        rounds = []
        comm, c_att = self._communicate(x, mask, B, N)
        rounds.append(c_att)
        posts = []
        for _ in range(self.rounds - 1):
            x, c_post = self.post_comm.forward(np.concatenate([x, comm], axis=1))
            posts.append(c_post)
            comm, c_att = self._communicate(x, mask, B, N)
            rounds.append(c_att)
        logits, c_act = self.actor.forward(np.concatenate([x, comm], axis=1))
        cache = (B, N, c_obs, rounds, posts, c_act)
        return logits.reshape(B, N, -1), cache

    def logits(self, obs, mask):
        return self.forward(obs, mask)[0]

    def probabilities(self, obs, mask):
        return softmax_masked(self.logits(obs, mask))

    def _communicate_backward(self, dcomm, c_att, B, N, acc):
        ck, cv, cq, K, V, Qr, att = c_att
        dcomm = dcomm.reshape(B, N, -1)
        datt = np.einsum("bic,bjc->bij", dcomm, V)
        dV = np.einsum("bij,bic->bjc", att, dcomm)
        dscores = softmax_backward(att, datt)
        dQ = np.einsum("bij,bjk->bik", dscores, K)
        dK = np.einsum("bij,bik->bjk", dscores, Qr)
        dx = 0.0
        for name, net, cache, g in (("hidden2key", self.hidden2key, ck, dK), ("hidden2value", self.hidden2value, cv, dV),
                                    ("hidden2query", self.hidden2query, cq, dQ)):
            grads, dxi = net.backward(cache, g.reshape(B * N, -1))
            _accumulate(acc, name, grads)
            dx = dx + dxi
        return dx

    def backward(self, cache, dlogits: np.ndarray) -> list:
        """Parameter gradients (``params`` order) for upstream gradient on the logits."""
        B, N, c_obs, rounds, posts, c_act = cache
        acc: dict = {}
        grads, dcat = self.actor.backward(c_act, dlogits.reshape(B * N, -1))
        _accumulate(acc, "actor", grads)
        h = self.hidden
        dx, dcomm = dcat[:, :h], dcat[:, h:]
        for r in reversed(range(len(rounds))):
            dx = dx + self._communicate_backward(dcomm, rounds[r], B, N, acc)
            if r > 0:
                grads, dcat = self.post_comm.backward(posts[r - 1], dx)
                _accumulate(acc, "post_comm", grads)
                dx, dcomm = dcat[:, :h], dcat[:, h:]
        grads, _ = self.obs2hidden.backward(c_obs, dx)
        _accumulate(acc, "obs2hidden", grads)
        out = []
        for name, net in self.nets():
            out += acc.get(name, [np.zeros_like(p) for p in net.params])
        return out

    # -- persistence -------------------------------------------------------------------------

    def blocks(self) -> dict:
        out = {}
        for name, net in self.nets():
            out.update(mlp_blocks(name, net))
        return out

    def arch(self) -> dict:
        return {"kind": "tarmac", "obs_size": self.obs_size, "hidden": self.hidden, "key_size": self.key_size,
                "comm_size": self.comm_size, "rounds": self.rounds,
                "nets": {name: net.descriptor() for name, net in self.nets()}}

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint) -> "TarmacActor":
        a = ck.arch
        actor = cls(a["obs_size"], a["hidden"], a["key_size"], a["comm_size"], a["rounds"])
        for name, _ in actor.nets():
            setattr(actor, name, mlp_from_blocks(name, a["nets"][name], ck.blocks))
        return actor


def _accumulate(acc: dict, name: str, grads: list) -> None:
    if name in acc:
        for a, g in zip(acc[name], grads):
            a += g
    else:
        acc[name] = [g.copy() for g in grads]


def tarmac_forward(actor: TarmacActor, obs: np.ndarray, mask: np.ndarray, p_d: float = 0.0, rng=None) -> np.ndarray:
    """Action probabilities per agent; each message is lost with probability ``p_d`` before attention."""
    mask = np.asarray(mask, dtype=bool)
    if p_d > 0:
        rng = np.random.default_rng() if rng is None else rng
        mask = mask & (rng.random(mask.shape) >= p_d)
    return softmax_masked(actor.logits(obs, mask))[0] if np.asarray(obs).ndim == 2 else softmax_masked(actor.logits(obs, mask))


__all__ = ["AllMasked", "CentralCritic", "IncompatibleCheckpoint", "MlpPolicy", "QNetwork", "TarmacActor",
           "he_input_size", "tarmac_forward"]
