"""Link prediction with a GCN encoder and dot-product decoder, plus the
edge-level dropping loop.

Edges are scored as ``sigmoid(<emb_u, emb_v>)`` on encoder output; edge
confidence is ``max(score, 1 - score)``. Explanations backpropagate the sum
of the candidate edges' pre-logistic scores to the node features in one
pass, and per-edge fidelity sufficiency compares the Bernoulli score
distributions on the full and explanation message graphs. Dropping touches
the training message graph only; evaluation always runs on the undropped
topology.
"""

from __future__ import annotations

import math
import time

import numpy as np
from scipy.stats import rankdata

from .drop import (
    criterion_candidates,
    criterion_needs_explanations,
    apply_criterion,
    quadrant_counts,
    sample_edge_mask,
)
from .explain import ExplanationSubgraph, SoftExplanation, harden, kl_divergence
from .gcn import (
    TrainConfig,
    adam_step,
    backward,
    forward,
    glorot_init,
    init_adam,
)
from .graph import (
    EdgeSplits,
    Graph,
    apply_edge_mask,
    normalize_adjacency,
    sample_absent_pairs,
)

__all__ = [
    "encode",
    "score_pairs",
    "bce_loss",
    "bce_loss_and_grad",
    "auc",
    "edge_confidence",
    "edge_batch_saliency",
    "edge_explanation",
    "bernoulli_fidelity",
    "run_xai_drop_edge",
    "edge_explanation_report",
]


def encode(params, adj, x):
    """Final-layer GCN representations (no softmax); returns (emb, tape)."""
    return forward(params, adj, x)


def _sigmoid(r):
    out = np.empty_like(r)
    pos = r >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-r[pos]))
    e = np.exp(r[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _raw_scores(emb: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", emb[pairs[:, 0]], emb[pairs[:, 1]])


def score_pairs(emb: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Logistic of the embedding dot product; symmetric in pair order."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return _sigmoid(_raw_scores(emb, pairs))


def bce_loss(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy of probabilities against 0/1 labels."""
    s = np.clip(scores, 1e-12, 1.0 - 1e-12)
    labels = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(labels * np.log(s) + (1.0 - labels) * np.log(1.0 - s)))


def bce_loss_and_grad(emb: np.ndarray, pairs: np.ndarray, labels: np.ndarray):
    """Loss plus its exact gradient with respect to the embeddings."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    labels = np.asarray(labels, dtype=np.float64)
    raw = _raw_scores(emb, pairs)
    s = _sigmoid(raw)
    # Stable BCE in terms of raw scores.
    loss = float(np.mean(np.logaddexp(0.0, raw) - labels * raw))
    d_raw = (s - labels) / len(pairs)
    d_emb = np.zeros_like(emb)
    np.add.at(d_emb, pairs[:, 0], d_raw[:, None] * emb[pairs[:, 1]])
    np.add.at(d_emb, pairs[:, 1], d_raw[:, None] * emb[pairs[:, 0]])
    return loss, d_emb


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based Mann-Whitney AUC; ties contribute 1/2."""
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def edge_confidence(scores: np.ndarray) -> np.ndarray:
    """Binary confidence max(score, 1 - score)."""
    return np.maximum(scores, 1.0 - scores)


def edge_batch_saliency(tape, emb: np.ndarray, pairs: np.ndarray) -> SoftExplanation:
    """Shared importance map for a batch of edges: backpropagates the sum of
    their pre-logistic scores to the input features in one pass."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValueError("candidate edge set is empty")
    d_emb = np.zeros_like(emb)
    np.add.at(d_emb, pairs[:, 0], emb[pairs[:, 1]])
    np.add.at(d_emb, pairs[:, 1], emb[pairs[:, 0]])
    _, grad_x = backward(tape, d_emb)
    return SoftExplanation(
        node_importance=np.abs(grad_x).sum(axis=1),
        target_nodes=np.unique(pairs),
    )


def edge_explanation(params, adj, x, candidate_pairs, g: Graph, k: float):
    """Explain a batch of edges; returns (soft explanation, hardened mask)."""
    emb, tape = encode(params, adj, x)
    soft = edge_batch_saliency(tape, emb, candidate_pairs)
    return soft, harden(soft, g, k)


def bernoulli_fidelity(s_full: np.ndarray, s_exp: np.ndarray) -> np.ndarray:
    """Per-edge fidelity sufficiency: 1 - KL(Ber(s_full) || Ber(s_exp))."""
    p = np.stack([1.0 - s_full, s_full], axis=1)
    q = np.stack([1.0 - s_exp, s_exp], axis=1)
    return 1.0 - kl_divergence(p, q)


def _eval_auc(params, adj, x, pos, neg):
    emb, _ = forward(params, adj, x)
    pairs = np.vstack([pos, neg])
    scores = score_pairs(emb, pairs)
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return auc(scores, labels)


def run_xai_drop_edge(
    splits: EdgeSplits,
    x: np.ndarray,
    train_cfg: TrainConfig,
    drop_cfg,
    explain_k: float = 0.25,
    seed: int = 0,
    neg_ratio: float = 1.0,
    track_quadrants: bool = True,
) -> dict:
    """Train one link-prediction model with (or without) edge dropping.

    ``drop_cfg`` of None disables dropping (baseline). Per epoch: score the
    training edges, gate by confidence, explain the candidates, map fidelity
    sufficiency to dropping probabilities, sample the Bernoulli edge mask,
    and train on the masked message graph; validation and the final test AUC
    always use the full training topology.
    """
    rng = np.random.default_rng([seed, drop_cfg.seed if drop_cfg is not None else 0])
    msg_graph = splits.train_graph()
    adj_full = normalize_adjacency(msg_graph)
    n = splits.num_nodes
    hidden = train_cfg.hidden_dim
    params = glorot_init(rng, x.shape[1], hidden, hidden)
    state = init_adam(params, train_cfg)

    forbidden = set()
    for pos in (splits.train_pos, splits.val_pos, splits.test_pos):
        if len(pos):
            forbidden.update((pos[:, 0] * np.int64(n) + pos[:, 1]).tolist())
    n_train_neg = int(math.floor(neg_ratio * len(splits.train_pos)))

    best_val = -np.inf
    best_params = params.copy()
    best_epoch = -1
    patience_left = train_cfg.patience
    quadrants = []
    prob_sum = np.zeros(msg_graph.num_edges)
    epochs_run = 0
    started = time.perf_counter()

    for epoch in range(train_cfg.epochs):
        epochs_run = epoch + 1
        emb, tape = encode(params, adj_full, x)
        s_train = score_pairs(emb, splits.train_pos)
        conf = edge_confidence(s_train)

        if track_quadrants:
            soft_all = edge_batch_saliency(tape, emb, splits.train_pos)
            sub_all = harden(soft_all, msg_graph, explain_k)
            emb_exp, _ = encode(
                params, normalize_adjacency(apply_edge_mask(msg_graph, sub_all.entry_mask)), x
            )
            fsuf_all = bernoulli_fidelity(
                s_train, score_pairs(emb_exp, splits.train_pos)
            )
            theta_for_quadrants = drop_cfg.theta if drop_cfg is not None else 0.9
            quadrants.append(quadrant_counts(conf, fsuf_all, theta_for_quadrants))

        if drop_cfg is None:
            adj_train = adj_full
        else:
            cand = criterion_candidates(drop_cfg.criterion, conf, drop_cfg.theta)
            fsuf = None
            if criterion_needs_explanations(drop_cfg.criterion) and len(cand):
                soft_c = edge_batch_saliency(tape, emb, splits.train_pos[cand])
                sub_c = harden(soft_c, msg_graph, explain_k)
                emb_c, _ = encode(
                    params,
                    normalize_adjacency(apply_edge_mask(msg_graph, sub_c.entry_mask)),
                    x,
                )
                fsuf = bernoulli_fidelity(s_train, score_pairs(emb_c, splits.train_pos))
            probs = apply_criterion(
                drop_cfg.criterion, conf, fsuf, drop_cfg.theta, drop_cfg.p,
                drop_cfg.mapping, rng,
            )
            prob_sum += probs
            entry_mask = sample_edge_mask(msg_graph, probs, rng)
            adj_train = normalize_adjacency(apply_edge_mask(msg_graph, entry_mask))

        neg = sample_absent_pairs(n, n_train_neg, forbidden, rng)
        pairs = np.vstack([splits.train_pos, neg])
        labels = np.concatenate([np.ones(len(splits.train_pos)), np.zeros(len(neg))])
        emb_t, tape_t = encode(params, adj_train, x)
        _, d_emb = bce_loss_and_grad(emb_t, pairs, labels)
        grads, _ = backward(tape_t, d_emb)
        params, state = adam_step(params, grads, state)

        if adj_full.masked:
            raise RuntimeError("evaluation adjacency was built from a masked graph")
        val_auc = _eval_auc(params, adj_full, x, splits.val_pos, splits.val_neg)
        if val_auc > best_val:
            best_val = val_auc
            best_params = params.copy()
            best_epoch = epoch
            patience_left = train_cfg.patience
        else:
            patience_left -= 1
            if patience_left == 0:
                break

    if best_epoch < 0:
        best_params = params
    test_auc = _eval_auc(best_params, adj_full, x, splits.test_pos, splits.test_neg)
    return {
        "params": best_params,
        "val_metric": float(best_val) if np.isfinite(best_val) else _eval_auc(
            best_params, adj_full, x, splits.val_pos, splits.val_neg
        ),
        "test_metric": float(test_auc),
        "best_epoch": best_epoch,
        "epochs_run": epochs_run,
        "quadrants": quadrants,
        "mean_drop_prob": prob_sum / max(epochs_run, 1),
        "wall_seconds": time.perf_counter() - started,
    }


def edge_explanation_report(params, splits: EdgeSplits, x, k: float) -> dict:
    """Explanation quality of the test edges (positives and negatives): each
    edge gets its own saliency subgraph; reports the fraction of thresholded
    predictions preserved plus mean Bernoulli KL sufficiency and necessity."""
    msg_graph = splits.train_graph()
    adj_full = normalize_adjacency(msg_graph)
    emb, tape = encode(params, adj_full, x)
    pairs = np.vstack([splits.test_pos, splits.test_neg])
    s_full = score_pairs(emb, pairs)
    matches = 0
    kl_suf = np.empty(len(pairs))
    kl_nec = np.empty(len(pairs))
    for i, (u, v) in enumerate(pairs):
        soft = edge_batch_saliency(tape, emb, np.array([[u, v]]))
        sub = harden(soft, msg_graph, k)
        emb_exp, _ = encode(
            params, normalize_adjacency(apply_edge_mask(msg_graph, sub.entry_mask)), x
        )
        emb_comp, _ = encode(
            params, normalize_adjacency(apply_edge_mask(msg_graph, ~sub.entry_mask)), x
        )
        s_exp = score_pairs(emb_exp, np.array([[u, v]]))[0]
        s_comp = score_pairs(emb_comp, np.array([[u, v]]))[0]
        sf = float(s_full[i])
        matches += int((sf > 0.5) == (s_exp > 0.5))
        kl_suf[i] = 1.0 - bernoulli_fidelity(np.array([sf]), np.array([s_exp]))[0]
        kl_nec[i] = 1.0 - bernoulli_fidelity(np.array([sf]), np.array([s_comp]))[0]
    return {
        "accuracy_sufficiency": matches / len(pairs),
        "mean_kl_sufficiency": float(kl_suf.mean()),
        "mean_kl_necessity": float(kl_nec.mean()),
    }
