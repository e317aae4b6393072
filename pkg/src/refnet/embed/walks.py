"""Second-order biased random walks (return parameter p, in-out parameter q)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..graph import Network
from ..numkit import derive_rng


@dataclass(frozen=True)
class WalkConfig:
    walks_per_node: int = 10
    walk_length: int = 80
    return_p: float = 1.0
    inout_q: float = 1.0
    window: int = 5
    negatives_per_positive: int = 5

    def __post_init__(self):
        for name in ("walks_per_node", "walk_length", "window", "negatives_per_positive"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.return_p <= 0 or self.inout_q <= 0:
            raise ValueError("p and q must be positive")
        if self.window >= self.walk_length:
            raise ValueError("window must be shorter than the walk")


class _Sampler:
    """First-order weighted proposals plus O(log m) adjacency lookups on CSR arrays."""

    def __init__(self, net: Network):
        und = net.as_undirected()
        self.n = und.node_count
        self.indptr, self.indices, w = und.csr()
        self.cum = np.cumsum(w)
        self.start_mass = np.concatenate([[0.0], self.cum])[self.indptr[:-1]]
        self.mass = np.concatenate([[0.0], self.cum])[self.indptr[1:]] - self.start_mass
        src = np.repeat(np.arange(self.n), np.diff(self.indptr))
        self.keys = src * self.n + self.indices  # sorted: rows ascending, columns sorted

    def propose(self, cur, rng):
        r = self.start_mass[cur] + rng.random(cur.size) * self.mass[cur]
        pos = np.searchsorted(self.cum, r, side="right")
        lo, hi = self.indptr[cur], self.indptr[cur + 1] - 1
        pos = np.clip(pos, lo, hi)  # guards float round-off at row boundaries
        return self.indices[pos]

    def adjacent(self, a, b):
        k = a * self.n + b
        pos = np.searchsorted(self.keys, k)
        pos = np.minimum(pos, self.keys.size - 1)
        return self.keys[pos] == k if self.keys.size else np.zeros(a.size, bool)


def biased_walks(net: Network, cfg: WalkConfig = WalkConfig(), seed: int = 0) -> np.ndarray:
    """``walks_per_node`` walks from every node, as an int array padded with -1.

    Row ``r * n + u`` is the r-th walk from node ``u``. Edges are walked as
    undirected. A walk from an isolated node stops at length one.
    """
    s = _Sampler(net)
    n, length = s.n, cfg.walk_length
    out = np.full((cfg.walks_per_node * n, length), -1, dtype=np.int64)
    inv_p, inv_q = 1.0 / cfg.return_p, 1.0 / cfg.inout_q
    alpha_max = max(inv_p, 1.0, inv_q)
    for r in range(cfg.walks_per_node):
        rng = derive_rng(seed, "walks", r)
        rows = np.arange(r * n, (r + 1) * n)
        out[rows, 0] = np.arange(n)
        alive = np.flatnonzero(s.mass > 0)
        if alive.size == 0:
            continue
        out[rows[alive], 1] = s.propose(alive, rng)
        for step in range(2, length):
            prev = out[rows[alive], step - 2]
            cur = out[rows[alive], step - 1]
            nxt = np.empty_like(cur)
            todo = np.arange(cur.size)
            while todo.size:
                cand = s.propose(cur[todo], rng)
                alpha = np.where(cand == prev[todo], inv_p,
                                 np.where(s.adjacent(prev[todo], cand), 1.0, inv_q))
                ok = rng.random(todo.size) * alpha_max < alpha
                nxt[todo[ok]] = cand[ok]
                todo = todo[~ok]
            out[rows[alive], step] = nxt
    return out


def walk_lists(walks: np.ndarray) -> list[list[int]]:
    return [row[row >= 0].tolist() for row in walks]


def context_pairs(walks: np.ndarray, window: int, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """(target, context) pairs inside each walk.

    Without ``rng`` every context within ``window`` steps is paired. With
    ``rng`` each target position draws its own reduced window uniformly from
    1..window, the usual word2vec weighting toward nearer contexts.
    """
    if rng is None:
        reach = np.full(walks.shape, window, dtype=np.int64)
    else:
        reach = rng.integers(1, window + 1, size=walks.shape)
    targets, contexts = [], []
    for d in range(1, window + 1):
        a, b = walks[:, :-d], walks[:, d:]
        ok = (a >= 0) & (b >= 0)
        fwd = ok & (reach[:, :-d] >= d)
        bwd = ok & (reach[:, d:] >= d)
        targets += [a[fwd], b[bwd]]
        contexts += [b[fwd], a[bwd]]
    return np.concatenate(targets), np.concatenate(contexts)


def unigram_table(walks: np.ndarray, n: int, power: float = 0.75) -> np.ndarray:
    """Negative-sampling distribution proportional to frequency ** power."""
    counts = np.bincount(walks[walks >= 0], minlength=n).astype(float)
    weights = counts ** power
    if weights.sum() == 0:
        weights = np.ones(n)
    return weights / weights.sum()
