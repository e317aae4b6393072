"""Unsupervised two-layer GraphSAGE with mean aggregation.

Each layer maps ``[h_self || mean(h_neighbours)]`` through an affine map;
layer one applies relu, layer two is linear and its output is L2-normalised.
Training pairs come from short random walks (positives) and degree-biased
random nodes (negatives); the loss is BCE on ``sigmoid(z_u . z_v)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..graph import Network
from ..numkit import AdamState, adam_step, derive_rng, sigmoid, xavier_uniform
from .walks import WalkConfig, biased_walks

NORM_EPS = 1e-12


@dataclass(frozen=True)
class SageConfig:
    layer_sizes: tuple = (20, 20)
    epochs: int = 20
    dropout: float = 0.3
    learning_rate: float = 1e-3
    neighbor_samples: tuple = (10, 5)
    walk_length: int = 5
    walks_per_node: int = 1
    negatives_per_positive: int = 1
    batch_size: int = 50

    def __post_init__(self):
        if len(self.layer_sizes) != 2 or len(self.neighbor_samples) != 2:
            raise ValueError("this GraphSAGE has exactly two layers")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")


class SageModel:
    def __init__(self, in_dim: int, cfg: SageConfig, rng=None, init: str = "xavier"):
        h1, h2 = cfg.layer_sizes
        rng = rng if rng is not None else derive_rng(0, "sage")
        if init == "zeros":
            self.w1, self.w2 = np.zeros((2 * in_dim, h1)), np.zeros((2 * h1, h2))
        else:
            self.w1 = xavier_uniform(2 * in_dim, h1, rng)
            self.w2 = xavier_uniform(2 * h1, h2, rng)
        self.b1, self.b2 = np.zeros(h1), np.zeros(h2)
        self.in_dim = in_dim
        self.cfg = cfg

    @property
    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]


class _Neighbours:
    def __init__(self, net: Network):
        und = net.as_undirected()
        self.indptr, self.indices, _ = und.csr()
        self.deg = np.diff(self.indptr)
        self.n = und.node_count

    def sample(self, nodes, k, rng):
        """``(len(nodes), k)`` uniform samples with replacement and a validity mask."""
        deg = self.deg[nodes]
        pick = (rng.random((nodes.size, k)) * np.maximum(deg, 1)[:, None]).astype(np.int64)
        idx = self.indices[np.minimum(self.indptr[nodes][:, None] + pick, self.indices.size - 1)] \
            if self.indices.size else np.zeros((nodes.size, k), np.int64)
        mask = np.broadcast_to((deg > 0)[:, None], idx.shape)
        return np.where(mask, idx, 0), mask.astype(np.float64)

    def mean_matrix(self):
        import scipy.sparse as sp
        data = np.repeat(1.0 / np.maximum(self.deg, 1), self.deg)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


def _masked_mean(values, mask):
    # values (m, k, d), mask (m, k)
    cnt = mask.sum(axis=1)
    return np.einsum("mkd,mk->md", values, mask) / np.maximum(cnt, 1)[:, None], cnt


def _dropout(x, rate, rng):
    """Inverted dropout; returns ``(dropped, mask)`` with ``mask=None`` when off."""
    if rng is None or rate <= 0:
        return x, None
    mask = (rng.random(x.shape, dtype=np.float32) >= rate) / (1.0 - rate)
    return x * mask, mask


def sage_forward(model: SageModel, x, nodes, hop1, mask1, hop2, mask2, rng=None):
    """Embeddings of ``nodes`` from a sampled two-hop neighbourhood.

    ``hop1`` is ``(m, k1)``; ``hop2`` is ``(m * k1, k2)``. Passing an ``rng``
    turns on dropout, applied to each layer's ``[self || neighbour mean]``
    input. Returns ``(z, cache)``.
    """
    m, k1 = hop1.shape
    rate = model.cfg.dropout
    x1 = x[hop1.ravel()]
    nm0, _ = _masked_mean(x1.reshape(m, k1, -1), mask1)
    nm1, _ = _masked_mean(x[hop2.ravel()].reshape(hop2.shape + (x.shape[1],)), mask2)
    in0, d0 = _dropout(np.concatenate([x[nodes], nm0], axis=1), rate, rng)
    in1, d1 = _dropout(np.concatenate([x1, nm1], axis=1), rate, rng)
    pre0 = in0 @ model.w1 + model.b1
    pre1 = in1 @ model.w1 + model.b1
    h0, h1 = np.maximum(pre0, 0.0), np.maximum(pre1, 0.0)
    nmh, cnt1 = _masked_mean(h1.reshape(m, k1, -1), mask1)
    in2, d2 = _dropout(np.concatenate([h0, nmh], axis=1), rate, rng)
    y = in2 @ model.w2 + model.b2
    norm = np.maximum(np.linalg.norm(y, axis=1), NORM_EPS)
    z = y / norm[:, None]
    cache = dict(in0=in0, in1=in1, pre0=pre0, pre1=pre1, in2=in2, d2=d2, z=z, norm=norm,
                 mask1=mask1, cnt1=cnt1, m=m, k1=k1)
    return z, cache


def sage_backward(model: SageModel, cache, dz):
    z, norm = cache["z"], cache["norm"]
    # through the L2 normalisation
    dy = (dz - z * np.sum(z * dz, axis=1, keepdims=True)) / norm[:, None]
    gw2 = cache["in2"].T @ dy
    gb2 = dy.sum(axis=0)
    din2 = dy @ model.w2.T
    if cache["d2"] is not None:
        din2 = din2 * cache["d2"]
    h = model.w1.shape[1]
    dh0, dnmh = din2[:, :h], din2[:, h:]
    m, k1, mask1 = cache["m"], cache["k1"], cache["mask1"]
    dh1 = (dnmh / np.maximum(cache["cnt1"], 1)[:, None])[:, None, :] * mask1[:, :, None]
    dh1 = dh1.reshape(m * k1, h)
    dpre0 = dh0 * (cache["pre0"] > 0)
    dpre1 = dh1 * (cache["pre1"] > 0)
    gw1 = cache["in0"].T @ dpre0 + cache["in1"].T @ dpre1
    gb1 = dpre0.sum(axis=0) + dpre1.sum(axis=0)
    return [gw1, gb1, gw2, gb2]


def pair_loss(z_u, z_v, labels):
    """Mean BCE on sigmoid(z_u . z_v) and its gradients w.r.t. both sides."""
    s = np.sum(z_u * z_v, axis=1)
    p = sigmoid(s)
    pc = np.clip(p, 1e-12, 1 - 1e-12)
    loss = -np.mean(labels * np.log(pc) + (1 - labels) * np.log1p(-pc))
    ds = (p - labels) / labels.size
    return float(loss), ds[:, None] * z_v, ds[:, None] * z_u


def walk_pairs(net: Network, cfg: SageConfig, seed, nodes_weight=None):
    """Positive (start, later-node) pairs and degree^0.75 negatives for one epoch."""
    rng = derive_rng(seed, "pairs")
    wcfg = WalkConfig(walks_per_node=cfg.walks_per_node, walk_length=cfg.walk_length,
                      window=max(cfg.walk_length - 1, 1))
    walks = biased_walks(net, wcfg, seed=derive_rng(seed, "walks").integers(2**31))
    heads = np.repeat(walks[:, :1], walks.shape[1] - 1, axis=1)
    tails = walks[:, 1:]
    ok = tails >= 0
    pu, pv = heads[ok], tails[ok]
    deg = np.diff(net.as_undirected().csr()[0]).astype(float)
    w = deg ** 0.75 if nodes_weight is None else nodes_weight
    w = w / w.sum() if w.sum() > 0 else np.full(net.node_count, 1.0 / net.node_count)
    k = cfg.negatives_per_positive
    nu = np.repeat(pu, k)
    nv = rng.choice(net.node_count, size=nu.size, p=w)
    u = np.concatenate([pu, nu])
    v = np.concatenate([pv, nv])
    y = np.concatenate([np.ones(pu.size), np.zeros(nu.size)])
    order = rng.permutation(u.size)
    return u[order], v[order], y[order]


def sage_batch(model, x, neigh: _Neighbours, u, v, y, rng, training=True):
    nodes = np.concatenate([u, v])
    k1, k2 = model.cfg.neighbor_samples
    hop1, mask1 = neigh.sample(nodes, k1, rng)
    hop2, mask2 = neigh.sample(hop1.ravel(), k2, rng)
    mask2 = mask2.reshape(hop1.size, k2) * mask1.reshape(-1, 1)
    z, cache = sage_forward(model, x, nodes, hop1, mask1, hop2, mask2,
                            rng=rng if training else None)
    b = u.size
    loss, dzu, dzv = pair_loss(z[:b], z[b:], y)
    grads = sage_backward(model, cache, np.concatenate([dzu, dzv]))
    return loss, grads


def sage_embed(model: SageModel, net: Network, x) -> np.ndarray:
    """Inference with full neighbourhood means and no dropout."""
    mean = _Neighbours(net).mean_matrix()
    h = np.maximum(np.concatenate([x, mean @ x], axis=1) @ model.w1 + model.b1, 0.0)
    y = np.concatenate([h, mean @ h], axis=1) @ model.w2 + model.b2
    return y / np.maximum(np.linalg.norm(y, axis=1), NORM_EPS)[:, None]


def train_graphsage(net: Network, features, cfg: SageConfig = SageConfig(), seed: int = 0,
                    init: str = "xavier"):
    """Returns ``(embeddings, loss_curve, model)``; one loss value per epoch."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != net.node_count:
        raise ValueError(f"feature matrix must have {net.node_count} rows, got shape {x.shape}")
    model = SageModel(x.shape[1], cfg, rng=derive_rng(seed, "sage-init"), init=init)
    neigh = _Neighbours(net)
    state = AdamState.for_params(model.params, learning_rate=cfg.learning_rate)
    curve = []
    for epoch in range(cfg.epochs):
        u, v, y = walk_pairs(net, cfg, derive_rng(seed, "epoch", epoch).integers(2**31))
        rng = derive_rng(seed, "batches", epoch)
        losses = []
        for start in range(0, u.size, cfg.batch_size):
            sl = slice(start, start + cfg.batch_size)
            loss, grads = sage_batch(model, x, neigh, u[sl], v[sl], y[sl], rng)
            adam_step(state, model.params, grads)
            losses.append(loss)
        curve.append(float(np.mean(losses)) if losses else float("nan"))
    return sage_embed(model, net, x), curve, model
