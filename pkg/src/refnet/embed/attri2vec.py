"""Attribute-mapping embeddings: node vector = act(x @ W), context vectors free."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..graph import Network
from ..numkit import AdamState, adam_step, derive_rng, log_sigmoid, sigmoid
from .walks import WalkConfig, biased_walks, context_pairs, unigram_table


@dataclass(frozen=True)
class Attri2VecConfig:
    hidden_dim: int = 128
    epochs: int = 10
    learning_rate: float = 1e-2
    mapping: str = "sigmoid"  # or "linear"
    batch_size: int = 4096
    walks: WalkConfig = field(default_factory=lambda: WalkConfig(
        walks_per_node=4, walk_length=5, window=4, negatives_per_positive=1))

    def __post_init__(self):
        if self.hidden_dim <= 0:
            raise ValueError("hidden_dim must be positive")
        if self.mapping not in ("sigmoid", "linear"):
            raise ValueError(f"unknown mapping {self.mapping!r}")


def attri2vec_map(weights: np.ndarray, x: np.ndarray, mapping: str = "sigmoid") -> np.ndarray:
    """Embed feature rows with learned weights; works for nodes never seen in training."""
    z = np.asarray(x, dtype=np.float64) @ weights
    return sigmoid(z) if mapping == "sigmoid" else z


def attri2vec_loss(weights, context, x, targets, ctx, labels, mapping="sigmoid"):
    """Mean BCE of sigmoid(h_t . c_c) over labelled pairs, with gradients.

    Embeddings are computed once per node; pair gradients are folded back onto
    nodes through a sparse ``n x n`` coupling matrix.
    """
    n = x.shape[0]
    h = attri2vec_map(weights, x, mapping)
    s = np.einsum("bd,bd->b", h[targets], context[ctx])
    loss = -np.mean(labels * log_sigmoid(s) + (1 - labels) * log_sigmoid(-s))
    ds = (sigmoid(s) - labels) / labels.size
    coupling = sp.csr_matrix((ds, (targets, ctx)), shape=(n, n))
    dh = coupling @ context
    if mapping == "sigmoid":
        dh *= h * (1.0 - h)
    return float(loss), x.T @ dh, np.asarray(coupling.T @ h)


def train_attri2vec(net: Network, features, cfg: Attri2VecConfig = Attri2VecConfig(),
                    seed: int = 0):
    """Returns ``(embeddings, loss_curve, weights)``; one loss value per epoch."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != net.node_count:
        raise ValueError(f"feature matrix must have {net.node_count} rows, got shape {x.shape}")
    n, d = x.shape
    rng = derive_rng(seed, "attri2vec")
    limit = np.sqrt(6.0 / (d + cfg.hidden_dim))
    weights = rng.uniform(-limit, limit, size=(d, cfg.hidden_dim))
    context = np.zeros((n, cfg.hidden_dim))
    walks = biased_walks(net, cfg.walks, seed=derive_rng(seed, "a2v-walks").integers(2**31))
    targets, ctx = context_pairs(walks, cfg.walks.window)
    if targets.size == 0:
        raise ValueError("walks produce no context pairs")
    noise = unigram_table(walks, n)
    k = cfg.walks.negatives_per_positive
    state = AdamState.for_params([weights, context], learning_rate=cfg.learning_rate)
    curve = []
    for _ in range(cfg.epochs):
        neg_t = np.repeat(targets, k)
        neg_c = rng.choice(n, size=neg_t.size, p=noise)
        t = np.concatenate([targets, neg_t])
        c = np.concatenate([ctx, neg_c])
        y = np.concatenate([np.ones(targets.size), np.zeros(neg_t.size)])
        order = rng.permutation(t.size)
        losses = []
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, g_w, g_c = attri2vec_loss(weights, context, x, t[idx], c[idx], y[idx], cfg.mapping)
            adam_step(state, [weights, context], [g_w, g_c])
            losses.append(loss)
        curve.append(float(np.mean(losses)))
    return attri2vec_map(weights, x, cfg.mapping), curve, weights
