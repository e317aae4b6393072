"""Skip-gram with negative sampling over node walks."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..numkit import AdamState, adam_step, derive_rng, log_sigmoid, sigmoid
from .walks import context_pairs, unigram_table


def scatter_rows(n: int, index: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Sum ``values`` rows into an ``n``-row matrix at ``index``."""
    m = sp.csr_matrix((np.ones(index.size), (index, np.arange(index.size))),
                      shape=(n, index.size))
    return np.asarray(m @ values)


def sgns_loss(vectors, context, targets, positives, negatives, dense: bool | None = None):
    """Mean SGNS loss over a batch and gradients for both tables.

    ``negatives`` is ``(batch, k)``. Per pair the loss is
    ``-log s(e_t . c_p) - sum_k log s(-e_t . c_nk)``.

    Two equivalent evaluation routes: gathering the scored rows (cost grows
    with the batch), or scoring all node pairs with one matrix product and
    folding the batch into an ``n x n`` coupling matrix (cost grows with
    ``n**2``; cheaper for large batches on small graphs). ``dense=None``
    picks the cheaper one.
    """
    b, k = negatives.shape
    n = vectors.shape[0]
    if dense is None:
        dense = n * n <= 40 * b * (k + 1)
    ctx_rows = np.concatenate([positives[:, None], negatives], axis=1)
    if dense:
        scores = vectors @ context.T
        s_all = scores[targets[:, None], ctx_rows]
    else:
        e = vectors[targets]
        s_all = np.einsum("bd,bkd->bk", e, context[ctx_rows])
    sign = np.ones(k + 1)
    sign[0] = -1.0
    loss = -log_sigmoid(-sign * s_all).sum() / b
    coef = sigmoid(s_all)
    coef[:, 0] -= 1.0
    coef /= b
    if dense:
        # coupling[c, u] = d loss / d (e_u . c_c)
        flat = ctx_rows.ravel() * n + np.repeat(targets, k + 1)
        coupling = np.bincount(flat, weights=coef.ravel(), minlength=n * n).reshape(n, n)
        return float(loss), coupling.T @ context, coupling @ vectors
    coupling = sp.csr_matrix((coef.ravel(), (ctx_rows.ravel(), np.repeat(np.arange(b), k + 1))),
                             shape=(n, b))
    g_ctx = np.asarray(coupling @ e)
    g_vec = scatter_rows(n, targets, np.asarray(coupling.T @ context))
    return float(loss), g_vec, g_ctx


def train_skipgram(walks: np.ndarray, n_nodes: int, dim: int = 128, window: int = 5,
                   negatives: int = 5, epochs: int = 1, learning_rate: float = 1e-2,
                   batch_size: int = 16384, dynamic_window: bool = True, seed: int = 0):
    """Learn node vectors from walks; returns ``(vectors, loss_history)``.

    ``loss_history[0]`` is the loss of the first batch before any update;
    the remaining entries are per-epoch mean batch losses.
    """
    rng = derive_rng(seed, "skipgram")
    targets, contexts = context_pairs(walks, window, rng=rng if dynamic_window else None)
    if targets.size == 0:
        raise ValueError("walks produce no context pairs")
    vectors = rng.uniform(-0.5 / dim, 0.5 / dim, size=(n_nodes, dim))
    context = np.zeros((n_nodes, dim))
    noise = unigram_table(walks, n_nodes)
    cdf = np.cumsum(noise)
    state = AdamState.for_params([vectors, context], learning_rate=learning_rate)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(targets.size)
        losses = []
        for start in range(0, order.size, batch_size):
            idx = order[start:start + batch_size]
            neg = np.searchsorted(cdf, rng.random((idx.size, negatives)) * cdf[-1], side="right")
            neg = np.minimum(neg, n_nodes - 1)
            loss, gv, gc = sgns_loss(vectors, context, targets[idx], contexts[idx], neg)
            if not history:
                history.append(loss)
            losses.append(loss)
            adam_step(state, [vectors, context], [gv, gc])
        history.append(float(np.mean(losses)))
    return vectors, history
