"""Weighted graph with typed nodes, shared by every network-facing module.

Nodes are dense 0-based integer ids. Each node may carry an external id, a
bipartite role tag (``"PC"``/``"SC"``) and named real-valued attributes.
Parallel observations of the same edge accumulate into its weight.
"""

from __future__ import annotations

import io
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

ROLES = ("PC", "SC")


class GraphError(ValueError):
    pass


class Network:
    """Adjacency-list graph, directed or undirected.

    Build with :meth:`add_edge`; treat as read-only afterwards. Derived views
    (:meth:`csr`, :meth:`adjacency_matrix`) are cached and dropped on mutation.
    """

    def __init__(
        self,
        node_count: int,
        directed: bool = False,
        roles: Sequence[str | None] | None = None,
        external_ids: Sequence[str] | None = None,
    ):
        if node_count < 0:
            raise GraphError("node_count must be non-negative")
        self.node_count = int(node_count)
        self.directed = bool(directed)
        if roles is not None:
            roles = list(roles)
            if len(roles) != node_count:
                raise GraphError("roles length does not match node_count")
            for r in roles:
                if r is not None and r not in ROLES:
                    raise GraphError(f"unknown role tag {r!r}")
        self.roles = roles
        if external_ids is not None:
            external_ids = [str(e) for e in external_ids]
            if len(external_ids) != node_count:
                raise GraphError("external_ids length does not match node_count")
        self.external_ids = external_ids
        self.attributes: dict[str, np.ndarray] = {}
        self._adj: list[dict[int, float]] = [dict() for _ in range(node_count)]
        self._csr = None
        self._und = None

    # -- construction -----------------------------------------------------

    def _check_node(self, u) -> int:
        if not isinstance(u, (int, np.integer)) or isinstance(u, bool):
            raise GraphError(f"invalid node id {u!r}")
        u = int(u)
        if u < 0 or u >= self.node_count:
            raise GraphError(f"node id {u} out of range [0, {self.node_count})")
        return u

    def add_edge(self, u: int, v: int, w: float = 1.0) -> "Network":
        u = self._check_node(u)
        v = self._check_node(v)
        if u == v:
            raise GraphError(f"self-loop on node {u} is not allowed")
        w = float(w)
        if not np.isfinite(w) or w <= 0:
            raise GraphError(f"edge weight must be positive, got {w}")
        if self.roles is not None:
            ru, rv = self.roles[u], self.roles[v]
            if {ru, rv} != {"PC", "SC"} or (self.directed and ru != "PC"):
                raise GraphError(
                    f"bipartite violation: edge ({u},{v}) joins roles {ru}->{rv}"
                )
        self._adj[u][v] = self._adj[u].get(v, 0.0) + w
        if not self.directed:
            self._adj[v][u] = self._adj[v].get(u, 0.0) + w
        self._csr = None
        self._und = None
        return self

    def set_attribute(self, name: str, values) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.node_count,):
            raise GraphError(f"attribute {name!r} must have one value per node")
        self.attributes[name] = values

    @classmethod
    def from_edges(
        cls,
        node_count: int,
        edges: Iterable[tuple[int, int, float]],
        directed: bool = False,
        roles=None,
        external_ids=None,
    ) -> "Network":
        net = cls(node_count, directed=directed, roles=roles, external_ids=external_ids)
        for u, v, w in edges:
            net.add_edge(u, v, w)
        return net

    # -- queries ----------------------------------------------------------

    def neighbors(self, u: int) -> list[tuple[int, float]]:
        u = self._check_node(u)
        return sorted(self._adj[u].items())

    def degree(self, u: int) -> int:
        return len(self._adj[self._check_node(u)])

    def weight(self, u: int, v: int) -> float:
        return self._adj[self._check_node(u)].get(self._check_node(v), 0.0)

    def has_edge(self, u: int, v: int) -> bool:
        return self.weight(u, v) > 0

    def edges(self) -> list[tuple[int, int, float]]:
        """Edges in ascending (u, v) order; undirected edges listed once with u < v."""
        out = []
        for u in range(self.node_count):
            for v, w in sorted(self._adj[u].items()):
                if self.directed or u < v:
                    out.append((u, v, w))
        return out

    @property
    def edge_count(self) -> int:
        total = sum(len(a) for a in self._adj)
        return total if self.directed else total // 2

    def total_weight(self) -> float:
        return float(sum(w for _, _, w in self.edges()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.node_count == other.node_count
            and self.directed == other.directed
            and self.roles == other.roles
            and self.external_ids == other.external_ids
            and self.edges() == other.edges()
        )

    def __repr__(self) -> str:
        kind = "directed" if self.directed else "undirected"
        return f"Network({self.node_count} nodes, {self.edge_count} edges, {kind})"

    # -- derived views ----------------------------------------------------

    def csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(indptr, indices, weights) with neighbours sorted per row."""
        if self._csr is None:
            indptr = np.zeros(self.node_count + 1, dtype=np.int64)
            idx, wts = [], []
            for u, adj in enumerate(self._adj):
                items = sorted(adj.items())
                indptr[u + 1] = indptr[u] + len(items)
                idx.extend(v for v, _ in items)
                wts.extend(w for _, w in items)
            self._csr = (
                indptr,
                np.asarray(idx, dtype=np.int64),
                np.asarray(wts, dtype=np.float64),
            )
        return self._csr

    def adjacency_matrix(self, weighted: bool = True) -> sp.csr_matrix:
        indptr, indices, weights = self.csr()
        data = weights if weighted else np.ones_like(weights)
        n = self.node_count
        return sp.csr_matrix((data, indices, indptr), shape=(n, n))

    def as_undirected(self) -> "Network":
        """Undirected copy; reciprocal directed edges merge by summing weights."""
        if not self.directed:
            return self
        if self._und is not None:
            return self._und
        und = Network(self.node_count, directed=False, roles=self.roles,
                      external_ids=self.external_ids)
        for u, v, w in self.edges():
            und.add_edge(u, v, w)
        und.attributes = dict(self.attributes)
        self._und = und
        return und

    def without_edges(self, removed: Iterable[tuple[int, int]]) -> "Network":
        drop = set()
        for u, v in removed:
            drop.add((u, v))
            if not self.directed:
                drop.add((v, u))
        out = Network(self.node_count, directed=self.directed, roles=self.roles,
                      external_ids=self.external_ids)
        for u, v, w in self.edges():
            if (u, v) not in drop:
                out.add_edge(u, v, w)
        out.attributes = dict(self.attributes)
        return out

    def node_index(self) -> dict[str, int]:
        if self.external_ids is None:
            raise GraphError("network has no external ids")
        return {e: i for i, e in enumerate(self.external_ids)}

    # -- CSV export -------------------------------------------------------

    def edges_csv(self) -> str:
        buf = io.StringIO()
        buf.write("source_id,target_id,weight\n")
        for u, v, w in self.edges():
            buf.write(f"{u},{v},{format_number(w)}\n")
        return buf.getvalue()

    def nodes_csv(self) -> str:
        names = sorted(self.attributes)
        buf = io.StringIO()
        buf.write(",".join(["node_id", "external_id", "role", *names]) + "\n")
        for u in range(self.node_count):
            ext = self.external_ids[u] if self.external_ids else str(u)
            role = (self.roles[u] or "") if self.roles else ""
            vals = [format_number(self.attributes[a][u]) for a in names]
            buf.write(",".join([str(u), ext, role, *vals]) + "\n")
        return buf.getvalue()


def format_number(x: float) -> str:
    """Shortest round-tripping text; integral values print without a decimal point."""
    x = float(x)
    if x.is_integer() and abs(x) < 2**53:
        return str(int(x))
    return repr(x)
