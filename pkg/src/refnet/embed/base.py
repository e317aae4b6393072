"""Embedding container, node feature matrices, CSV and PCA exports."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..graph import Network, format_number

FEATURE_SETS = ("with_social", "without_social")
MODELS = ("node2vec", "graphsage", "attri2vec")
SOCIAL_COLUMNS = ("degree", "eigenvector", "betweenness")


@dataclass(frozen=True)
class EmbeddingMatrix:
    node_ids: tuple
    vectors: np.ndarray
    model: str
    features: str

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != len(self.node_ids):
            raise ValueError("need one row per node")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding contains non-finite values")
        if self.features not in FEATURE_SETS:
            raise ValueError(f"unknown feature set {self.features!r}")
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def rows(self, nodes) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64)
        bad = sorted(set(nodes[(nodes < 0) | (nodes >= len(self.node_ids))].tolist()))
        if bad:
            raise KeyError(f"nodes without embeddings: {bad}")
        return self.vectors[nodes]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(["node_id"] + [f"e{i}" for i in range(self.dim)]) + "\n")
        for nid, row in zip(self.node_ids, self.vectors):
            buf.write(",".join([str(nid)] + [format_number(x) for x in row]) + "\n")
        return buf.getvalue()


def node_features(net: Network, people: pd.DataFrame, feature_set: str,
                  social: dict | None = None) -> np.ndarray:
    """Per-node input matrix in node-id order.

    ``people`` is the physician frame indexed by physician id. ``social`` maps
    physician id -> (degree, eigenvector, betweenness) in the professional
    network. Age is z-scored and centralities min-max scaled over the nodes
    of ``net``. With social features a final column flags rows with any
    imputed value.
    """
    if feature_set not in FEATURE_SETS:
        raise ValueError(f"unknown feature set {feature_set!r}")
    ids = net.external_ids
    frame = people.reindex(ids)
    age = frame["age"].to_numpy(dtype=float)
    missing = frame["age_imputed"].fillna(1).to_numpy(dtype=float)
    age = np.where(np.isnan(age), np.nanmean(age) if np.isfinite(age).any() else 0.0, age)
    sd = age.std()
    age = (age - age.mean()) / sd if sd > 0 else age - age.mean()
    gender = frame["gender_code"].to_numpy(dtype=float)
    missing = np.maximum(missing, np.isnan(gender))
    gender = np.where(np.isnan(gender), 0.5, gender)
    cols = [age, gender]
    if feature_set == "with_social":
        if social is None:
            raise ValueError("with_social features need centralities")
        cent = np.array([social.get(e, (np.nan,) * 3) for e in ids], dtype=float).reshape(len(ids), 3)
        missing = np.maximum(missing, np.isnan(cent).any(axis=1))
        for j in range(3):
            c = cent[:, j]
            fill = np.nanmin(c) if np.isfinite(c).any() else 0.0
            c = np.where(np.isnan(c), fill, c)
            span = c.max() - c.min()
            cols.append((c - c.min()) / span if span > 0 else np.zeros_like(c))
        cols.append(missing)
    return np.column_stack(cols)


def social_lookup(prof: Network, table: dict) -> dict:
    """physician id -> (degree, eigenvector, betweenness) from a centrality table."""
    return {e: (table["degree"][i], table["eigenvector"][i], table["betweenness"][i])
            for i, e in enumerate(prof.external_ids)}


def pca_2d(vectors: np.ndarray) -> np.ndarray:
    """Project onto the top two principal axes; axis signs fixed by the largest loading."""
    x = np.asarray(vectors, dtype=np.float64)
    x = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    axes = vt[:2]
    if axes.shape[0] < 2:
        axes = np.vstack([axes, np.zeros((2 - axes.shape[0], x.shape[1]))])
    for a in axes:
        k = np.argmax(np.abs(a))
        if a[k] < 0:
            a *= -1
    return x @ axes.T


def pca_csv(emb: EmbeddingMatrix, net: Network, people: pd.DataFrame) -> str:
    xy = pca_2d(emb.vectors)
    frame = people.reindex(net.external_ids)
    buf = io.StringIO()
    buf.write("node_id,x,y,role,gender,birth_year,hospital\n")
    for i, ext in enumerate(net.external_ids):
        row = frame.iloc[i]
        by = row["birth_year"]
        by = "" if pd.isna(by) else str(int(by))
        g = row["gender"] if isinstance(row["gender"], str) else ""
        h = row["hospital"] if isinstance(row["hospital"], str) else ""
        role = net.roles[i] if net.roles else ""
        buf.write(f"{i},{format_number(xy[i, 0])},{format_number(xy[i, 1])},{role},{g},{by},{h}\n")
    return buf.getvalue()
