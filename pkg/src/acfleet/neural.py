"""Small numpy neural-network toolkit: MLPs with hand-written backward passes, losses, Adam.

Everything runs in float64. Arrays are 2-D ``(batch, features)``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ShapeMismatch(ValueError):
    pass


class AllMasked(ValueError):
    pass


_ACTS = ("relu", "tanh", None)


def _init_weight(rng: np.random.Generator, fan_in: int, fan_out: int, activation) -> np.ndarray:
    if activation == "tanh":
        bound = np.sqrt(6.0 / (fan_in + fan_out))  # Xavier-uniform
    else:
        bound = np.sqrt(6.0 / fan_in)  # Kaiming-uniform
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Mlp:
    """Fully connected network; hidden layers use ``activation``, the output ``out_activation``."""

    def __init__(self, sizes, activation="relu", out_activation=None, rng=None, out_scale: float = 1.0):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if activation not in _ACTS or out_activation not in _ACTS:
            raise ValueError(f"unsupported activation {activation!r}/{out_activation!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.sizes = [int(s) for s in sizes]
        self.activations = [activation] * (len(sizes) - 2) + [out_activation]
        self.params: list[np.ndarray] = []
        for k, (fi, fo) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            W = _init_weight(rng, fi, fo, activation)
            if k == len(self.sizes) - 2:
                W *= out_scale
            self.params += [W, np.zeros(fo)]

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ShapeMismatch(f"expected (batch, {self.sizes[0]}) input, got {x.shape}")
        cache = [x]
        h = x
        for k in range(self.n_layers):
            W, b = self.params[2 * k], self.params[2 * k + 1]
            h = h @ W + b
            act = self.activations[k]
            if act == "relu":
                h = np.maximum(h, 0.0)
            elif act == "tanh":
                h = np.tanh(h)
            cache.append(h)
        return h, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dy: np.ndarray):
        """Returns (parameter gradients in ``params`` order, input gradient)."""
        dy = np.asarray(dy, dtype=float)
        if dy.shape != cache[-1].shape:
            raise ShapeMismatch(f"upstream gradient {dy.shape} != output {cache[-1].shape}")
        grads: list = [None] * len(self.params)
        g = dy
        for k in reversed(range(self.n_layers)):
            out = cache[k + 1]
            act = self.activations[k]
            if act == "relu":
                g = g * (out > 0)
            elif act == "tanh":
                g = g * (1.0 - out * out)
            grads[2 * k] = cache[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.params[2 * k].T
        return grads, g

    def descriptor(self) -> dict:
        return {"sizes": self.sizes, "activations": self.activations}


# --------------------------------------------------------------------------- softmax / losses


def softmax_masked(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise softmax with masked entries forced to probability 0."""
    logits = np.asarray(logits, dtype=float)
    if mask is None:
        z = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise AllMasked("softmax row with every entry masked")
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Gradient wrt logits given probabilities ``p`` and upstream ``dp`` (masked entries get 0)."""
    return p * (dp - (p * dp).sum(axis=-1, keepdims=True))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def categorical_logp(logits: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return log_softmax(logits)[np.arange(len(actions)), actions]


def ppo_clip_loss(logits, actions, logp_old, advantages, clip: float = 0.2):
    """Negative clipped surrogate (mean over batch) and its gradient wrt logits.

    Also returns the probability ratios for diagnostics.
    """
    actions = np.asarray(actions, dtype=int)
    logp_all = log_softmax(logits)
    logp = logp_all[np.arange(len(actions)), actions]
    ratio = np.exp(logp - logp_old)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages
    loss = -np.mean(np.minimum(unclipped, clipped))
    # gradient flows only where the unclipped term is the active minimum
    active = unclipped <= clipped
    dlogp = np.where(active, -advantages * ratio, 0.0) / len(actions)
    probs = np.exp(logp_all)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(actions)), actions] = 1.0
    dlogits = dlogp[:, None] * (onehot - probs)
    return loss, dlogits, ratio


def mse_loss(pred, target):
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def huber_loss(pred, target, delta: float = 1.0):
    diff = pred - target
    absd = np.abs(diff)
    quad = absd <= delta
    loss = np.where(quad, 0.5 * diff * diff, delta * (absd - 0.5 * delta))
    grad = np.where(quad, diff, delta * np.sign(diff)) / diff.size
    return float(loss.mean()), grad


def dqn_loss(q_values, actions, targets, delta: float = 1.0):
    """Huber loss between Q(o, a) and Bellman targets; gradient wrt all Q outputs."""
    actions = np.asarray(actions, dtype=int)
    rows = np.arange(len(actions))
    chosen = q_values[rows, actions]
    loss, g = huber_loss(chosen, targets, delta)
    dq = np.zeros_like(q_values)
    dq[rows, actions] = g
    return loss, dq


def bellman_targets(rewards, next_q, gamma: float, done=None):
    nxt = np.max(next_q, axis=1)
    if done is not None:
        nxt = np.where(done, 0.0, nxt)
    return rewards + gamma * nxt


def clip_grad_norm(grads: list, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``; returns the norm."""
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


# --------------------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params: list, grads: list, state: AdamState) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params/grads/state length mismatch")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} != parameter {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    def __init__(self, params: list, lr: float = 1e-3, **kw):
        self.params = params
        self.state = AdamState.zeros_like(params, lr=lr, **kw)

    def step(self, grads: list) -> None:
        adam_step(self.params, grads, self.state)


# --------------------------------------------------------------------------- gradient checking


def numerical_gradient(f, params: list, eps: float = 1e-5, probes=None, rng=None):
    """Central differences of scalar ``f()`` wrt entries of ``params``.

    ``probes`` limits the check to that many random entries; returns a list of
    (param_index, flat_index, numeric) tuples.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    sizes = [p.size for p in params]
    total = sum(sizes)
    if probes is None or probes >= total:
        picks = range(total)
    else:
        picks = rng.choice(total, size=probes, replace=False)
    offsets = np.cumsum([0] + sizes)
    out = []
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        j = int(flat - offsets[k])
        view = params[k].reshape(-1)
        old = view[j]
        view[j] = old + eps
        fp = f()
        view[j] = old - eps
        fm = f()
        view[j] = old
        out.append((k, j, (fp - fm) / (2 * eps)))
    return out


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


# --------------------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"ACCK"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """Architecture descriptor plus named parameter blocks (stored in declaration order)."""

    arch: dict
    blocks: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def save(self, path) -> None:
        path = Path(path)
        header = {
            "arch": self.arch,
            "blocks": [{"name": k, "shape": list(v.shape)} for k, v in self.blocks.items()],
        }
        raw = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(raw)))
            fh.write(raw)
            for v in self.blocks.values():
                fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(self.metadata, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        with open(path, "rb") as fh:
            if fh.read(4) != CHECKPOINT_MAGIC:
                raise ValueError(f"{path} is not a checkpoint")
            version, hlen = struct.unpack("<II", fh.read(8))
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            header = json.loads(fh.read(hlen))
            blocks = {}
            for b in header["blocks"]:
                n = int(np.prod(b["shape"])) if b["shape"] else 1
                blocks[b["name"]] = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(float).reshape(b["shape"])
        sidecar = path.with_suffix(path.suffix + ".json")
        metadata = json.loads(sidecar.read_text()) if sidecar.exists() else {}
        return cls(header["arch"], blocks, metadata)


def mlp_blocks(prefix: str, net: Mlp) -> dict:
    return {f"{prefix}.{k}": p for k, p in enumerate(net.params)}


def mlp_from_blocks(prefix: str, desc: dict, blocks: dict) -> Mlp:
    acts = desc["activations"]
    hidden = acts[0] if len(acts) > 1 else None
    net = Mlp(desc["sizes"], activation=hidden if hidden else "relu", out_activation=acts[-1])
    net.activations = list(acts)
    net.params = [blocks[f"{prefix}.{k}"].copy() for k in range(len(net.params))]
    return net
