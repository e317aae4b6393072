"""Degree, eigenvector and betweenness centrality on the unweighted skeleton."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import Network


class ConvergenceError(RuntimeError):
    def __init__(self, iterations: int, delta: float):
        super().__init__(f"power iteration did not converge after {iterations} "
                         f"iterations (last delta {delta:.3e})")
        self.iterations = iterations
        self.delta = delta


@dataclass(frozen=True)
class CentralityVector:
    measure: str
    values: np.ndarray
    normalization: str

    def __len__(self):
        return len(self.values)


def _skeleton(net: Network) -> sp.csr_matrix:
    if net.directed:
        raise ValueError("centralities are defined on undirected networks")
    return net.adjacency_matrix(weighted=False)


def degree_centrality(net: Network) -> CentralityVector:
    n = net.node_count
    if n < 2:
        raise ValueError("degree centrality needs at least 2 nodes")
    deg = np.asarray(_skeleton(net).sum(axis=1)).ravel()
    return CentralityVector("degree", deg / (n - 1), "n-1")


def eigenvector_centrality(net: Network, tol: float = 1e-10,
                           max_iter: int = 10_000) -> CentralityVector:
    """Dominant adjacency eigenvector by power iteration from the uniform vector.

    Iterates with ``A + I``: same eigenvectors, but the shift makes the
    Perron root strictly dominant so bipartite graphs do not oscillate.
    """
    a = _skeleton(net)
    if a.nnz == 0:
        raise ValueError("eigenvector centrality needs at least one edge")
    n = net.node_count
    x = np.full(n, 1.0 / np.sqrt(n))
    delta = np.inf
    for it in range(1, max_iter + 1):
        y = a @ x + x
        y /= np.linalg.norm(y)
        delta = float(np.linalg.norm(y - x))
        x = y
        if delta < tol:
            break
    else:
        raise ConvergenceError(max_iter, delta)
    x = np.abs(x)
    x /= np.linalg.norm(x)
    return CentralityVector("eigenvector", x, "l2")


def betweenness_centrality(net: Network, block: int = 512) -> CentralityVector:
    """Brandes accumulation, run level-synchronously for a block of sources at once.

    Path counts and dependencies for ``block`` BFS trees are held as dense
    ``n x block`` matrices and advanced with sparse products. Blocks are
    reduced in source order. The undirected double count is halved.
    """
    a = _skeleton(net)
    n = net.node_count
    bc = np.zeros(n)
    for start in range(0, n, block):
        sources = np.arange(start, min(start + block, n))
        bc += _brandes_block(a, sources).sum(axis=1)
    return CentralityVector("betweenness", bc / 2.0, "raw/2")


def _brandes_block(a: sp.csr_matrix, sources: np.ndarray) -> np.ndarray:
    n, b = a.shape[0], len(sources)
    cols = np.arange(b)
    dist = np.full((n, b), -1, dtype=np.int64)
    sigma = np.zeros((n, b))
    dist[sources, cols] = 0
    sigma[sources, cols] = 1.0
    frontier = sigma.copy()
    level = 0
    while True:
        reach = np.asarray(a @ frontier)
        new = (dist < 0) & (reach > 0)
        if not new.any():
            break
        level += 1
        dist[new] = level
        sigma[new] = reach[new]
        frontier = np.where(new, reach, 0.0)

    delta = np.zeros((n, b))
    for lvl in range(level, 0, -1):
        at = dist == lvl
        coef = np.where(at, (1.0 + delta) / np.where(at, sigma, 1.0), 0.0)
        pull = np.asarray(a @ coef)
        prev = dist == lvl - 1
        delta[prev] += sigma[prev] * pull[prev]
    delta[sources, cols] = 0.0
    return delta


def centrality_table(net: Network, tol: float = 1e-10, max_iter: int = 10_000) -> dict:
    """All three measures keyed by name; eigenvector is zero on an edgeless graph."""
    out = {
        "degree": degree_centrality(net).values if net.node_count >= 2 else np.zeros(net.node_count),
        "betweenness": betweenness_centrality(net).values,
    }
    if net.edge_count:
        out["eigenvector"] = eigenvector_centrality(net, tol=tol, max_iter=max_iter).values
    else:
        out["eigenvector"] = np.zeros(net.node_count)
    return out
