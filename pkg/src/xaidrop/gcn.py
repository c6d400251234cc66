"""Two-layer graph convolutional network with exact reverse-mode gradients.

The forward pass is ``logits = A_hat @ relu(A_hat @ X @ W0 + b0) @ W1 + b1``
with ``A_hat`` the symmetrically normalized self-loop adjacency. Everything
runs in float64 and is deterministic given the initialization generator.
:func:`backward` returns gradients with respect to both the parameters and
every entry of the input features, which is what gradient-based saliency
needs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .graph import NormalizedAdjacency

__all__ = [
    "TrainConfig",
    "ModelParams",
    "ForwardTape",
    "AdamState",
    "glorot_init",
    "forward",
    "backward",
    "softmax",
    "softmax_xent",
    "xent_grad",
    "predict_proba",
    "accuracy",
    "init_adam",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings.

    The values below are the usual citation-network conventions; nothing in
    the dropping strategies depends on them and they are all overridable.
    """

    hidden_dim: int = 64
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 200
    patience: int = 30
    use_bias: bool = True

    def __post_init__(self):
        if self.hidden_dim <= 0 or self.epochs < 0 or self.patience <= 0:
            raise ValueError(f"non-positive count in {self}")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError(f"bad rate in {self}")


@dataclass
class ModelParams:
    """Dense weights of the two layers; also reused as the gradient container."""

    w0: np.ndarray
    b0: np.ndarray
    w1: np.ndarray
    b1: np.ndarray

    def copy(self) -> "ModelParams":
        return ModelParams(self.w0.copy(), self.b0.copy(), self.w1.copy(), self.b1.copy())

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w0": self.w0, "b0": self.b0, "w1": self.w1, "b1": self.b1}


def glorot_init(rng, in_dim: int, hidden_dim: int, out_dim: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, drawn from ``rng`` in a fixed order."""

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    return ModelParams(
        w0=glorot(in_dim, hidden_dim),
        b0=np.zeros(hidden_dim),
        w1=glorot(hidden_dim, out_dim),
        b1=np.zeros(out_dim),
    )


@dataclass
class ForwardTape:
    """Intermediates cached by :func:`forward` for one (params, adj, X) triple."""

    adj: NormalizedAdjacency
    x: np.ndarray
    z0: np.ndarray   # pre-activation of layer 0
    h1: np.ndarray   # relu(z0)
    u1: np.ndarray   # adj @ h1
    logits: np.ndarray
    w0: np.ndarray
    w1: np.ndarray


def forward(params: ModelParams, adj: NormalizedAdjacency, x: np.ndarray):
    """Run the two-layer GCN; returns (logits, tape)."""
    n = adj.num_nodes
    if x.shape[0] != n:
        raise ValueError(f"features have {x.shape[0]} rows for {n} nodes")
    if x.shape[1] != params.w0.shape[0]:
        raise ValueError(
            f"feature dim {x.shape[1]} != W0 input dim {params.w0.shape[0]}"
        )
    a = adj.matrix
    z0 = a @ (x @ params.w0) + params.b0
    h1 = np.maximum(z0, 0.0)
    u1 = a @ h1
    logits = u1 @ params.w1 + params.b1
    for name, arr in (("layer0", z0), ("layer1", logits)):
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite values in {name} output")
    tape = ForwardTape(adj=adj, x=x, z0=z0, h1=h1, u1=u1, logits=logits,
                       w0=params.w0, w1=params.w1)
    return logits, tape


def backward(tape: ForwardTape, d_logits: np.ndarray):
    """Exact gradients of sum(d_logits * logits) w.r.t. params and features.

    Returns ``(grads, grad_x)`` where ``grads`` is a :class:`ModelParams`
    holding dW0, db0, dW1, db1.
    """
    if d_logits.shape != tape.logits.shape:
        raise ValueError(
            f"upstream gradient shape {d_logits.shape} != logits shape {tape.logits.shape}"
        )
    a = tape.adj.matrix
    dw1 = tape.u1.T @ d_logits
    db1 = d_logits.sum(axis=0)
    dh1 = a @ (d_logits @ tape.w1.T)
    dz0 = dh1 * (tape.z0 > 0.0)
    dv = a @ dz0
    dw0 = tape.x.T @ dv
    db0 = dz0.sum(axis=0)
    grad_x = dv @ tape.w0.T
    return ModelParams(w0=dw0, b0=db0, w1=dw1, b1=db1), grad_x


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray):
    """Mean cross-entropy over masked nodes; returns (loss, softmax probs)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("loss mask selects no nodes")
    prob = softmax(logits)
    idx = np.flatnonzero(mask)
    picked = prob[idx, labels[idx]]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    return loss, prob


def xent_grad(prob: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """d(mean masked cross-entropy)/d(logits)."""
    mask = np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    d = np.zeros_like(prob)
    d[idx] = prob[idx]
    d[idx, labels[idx]] -= 1.0
    d /= len(idx)
    return d


def predict_proba(params: ModelParams, adj: NormalizedAdjacency, x: np.ndarray) -> np.ndarray:
    logits, _ = forward(params, adj, x)
    return softmax(logits)


def accuracy(prob: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Fraction of masked nodes whose argmax (lowest index on ties) is correct."""
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    pred = prob[idx].argmax(axis=1)
    return float((pred == labels[idx]).mean())


# ---------------------------------------------------------------------------
# Adam with decoupled weight decay (decay on weight matrices, not biases)
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: ModelParams
    v: ModelParams
    step: int
    learning_rate: float
    beta1: float
    beta2: float
    eps: float
    weight_decay: float


def init_adam(params: ModelParams, config: TrainConfig,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    zeros = ModelParams(*(np.zeros_like(a) for a in
                          (params.w0, params.b0, params.w1, params.b1)))
    return AdamState(
        m=zeros,
        v=zeros.copy(),
        step=0,
        learning_rate=config.learning_rate,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        weight_decay=config.weight_decay,
    )


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState):
    """One deterministic update; returns (new_params, new_state)."""
    t = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    decayed = {"w0", "w1"}
    for name, p in params.arrays().items():
        g = grads.arrays()[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        m = state.beta1 * state.m.arrays()[name] + (1 - state.beta1) * g
        v = state.beta2 * state.v.arrays()[name] + (1 - state.beta2) * g * g
        mhat = m / (1 - state.beta1 ** t)
        vhat = v / (1 - state.beta2 ** t)
        update = mhat / (np.sqrt(vhat) + state.eps)
        if name in decayed and state.weight_decay:
            update = update + state.weight_decay * p
        new_p[name] = p - state.learning_rate * update
        new_m[name] = m
        new_v[name] = v
    return (
        ModelParams(**new_p),
        replace(state, m=ModelParams(**new_m), v=ModelParams(**new_v), step=t),
    )


# ---------------------------------------------------------------------------
# Checkpoints (bit-exact npz round trip)
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: ModelParams, config: TrainConfig, seed: int) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "seed": int(seed),
        "config": {
            "hidden_dim": config.hidden_dim,
            "learning_rate": config.learning_rate,
            "weight_decay": config.weight_decay,
            "epochs": config.epochs,
            "patience": config.patience,
            "use_bias": config.use_bias,
        },
    }
    np.savez(
        path,
        meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        **params.arrays(),
    )


def load_checkpoint(path):
    """Returns (params, config, seed); arrays round-trip bit-exactly."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        params = ModelParams(
            w0=data["w0"], b0=data["b0"], w1=data["w1"], b1=data["b1"]
        )
    config = TrainConfig(**meta["config"])
    return params, config, meta["seed"]
