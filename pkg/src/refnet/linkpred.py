"""Edge split, pair classifiers and the with/without social features experiment."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from . import embed
from .centrality import centrality_table
from .graph import Network, format_number
from .ingest import physician_frame
from .netbuild import build_professional_network, build_referral_network, extract_interactions
from .numkit import Mlp, check_finite, derive_rng, derive_seed, fit_binary

REPORT_COLUMNS = ["model", "features", "loss", "accuracy", "auc", "seed"]
PAIR_OPERATORS = ("hadamard", "l1", "l2", "average")
CLASSIFIER_FOR = {"node2vec": "logistic", "graphsage": "mlp", "attri2vec": "mlp"}


class SplitError(ValueError):
    pass


@dataclass
class EdgeSplit:
    """Held-out positives and matched negatives.

    ``train_graph`` is the network minus the test positives. The classifier's
    training positives are held out of it as well, giving ``embedding_graph``;
    embeddings never see any pair that the classifier is trained or tested on.
    """
    train_graph: Network
    embedding_graph: Network
    train_pos: np.ndarray
    train_neg: np.ndarray
    test_pos: np.ndarray
    test_neg: np.ndarray
    test_fraction: float
    seed: int

    def train_rows(self):
        pairs = np.vstack([self.train_pos, self.train_neg])
        labels = np.r_[np.ones(len(self.train_pos)), np.zeros(len(self.train_neg))]
        return pairs, labels

    def test_rows(self):
        pairs = np.vstack([self.test_pos, self.test_neg])
        labels = np.r_[np.ones(len(self.test_pos)), np.zeros(len(self.test_neg))]
        return pairs, labels


def _pair_set(pairs) -> set:
    return {(int(u), int(v)) for u, v in pairs}


def split_edges(net: Network, test_fraction: float = 0.1, seed: int = 0,
                train_fraction: float | None = None) -> EdgeSplit:
    """Hold out test and classifier-training edges and draw matching negatives.

    ``round(test_fraction * m)`` edges go to the test set and
    ``round(train_fraction * m)`` (default: as many) to classifier training.
    An edge is skipped when removing it would leave an endpoint isolated.
    Negatives are PC->SC pairs (any pair when the network has no roles)
    absent from ``net``; train and test negatives are disjoint.
    """
    if not 0 < test_fraction < 0.5:
        raise SplitError("test_fraction must lie in (0, 0.5)")
    train_fraction = test_fraction if train_fraction is None else train_fraction
    if not 0 < train_fraction < 0.5 or test_fraction + train_fraction >= 1:
        raise SplitError("train_fraction must lie in (0, 0.5)")
    edges = np.array([(u, v) for u, v, _ in net.edges()], dtype=np.int64).reshape(-1, 2)
    m = len(edges)
    n_test = int(round(test_fraction * m))
    n_train = int(round(train_fraction * m))
    if n_test == 0 or n_train == 0:
        raise SplitError(f"{m} edges are too few for test fraction {test_fraction}")
    rng = derive_rng(seed, "split")
    deg = np.bincount(edges.ravel(), minlength=net.node_count)
    chosen = []
    for i in rng.permutation(m):
        u, v = edges[i]
        if deg[u] > 1 and deg[v] > 1:
            deg[u] -= 1
            deg[v] -= 1
            chosen.append(i)
            if len(chosen) == n_test + n_train:
                break
    if len(chosen) < n_test + n_train:
        raise SplitError("cannot hold out enough edges without isolating nodes")
    test_pos = edges[np.sort(chosen[:n_test])]
    train_pos = edges[np.sort(chosen[n_test:])]

    if net.roles is not None:
        src = np.array([i for i, r in enumerate(net.roles) if r == "PC"], dtype=np.int64)
        dst = np.array([i for i, r in enumerate(net.roles) if r == "SC"], dtype=np.int64)
        pairs_total = len(src) * len(dst)
    else:
        src = dst = np.arange(net.node_count)
        pairs_total = net.node_count * (net.node_count - 1) // (1 if net.directed else 2)
    existing = _pair_set(edges)
    if not net.directed:
        existing |= {(v, u) for u, v in existing}
    n_neg = n_test + n_train
    if pairs_total - m < n_neg:
        raise SplitError("not enough non-edges to draw negatives")
    neg, seen = [], set()
    while len(neg) < n_neg:
        need = n_neg - len(neg)
        cu = src[rng.integers(len(src), size=2 * need + 16)]
        cv = dst[rng.integers(len(dst), size=2 * need + 16)]
        for u, v in zip(cu.tolist(), cv.tolist()):
            key = (u, v) if net.directed else (min(u, v), max(u, v))
            if u == v or (u, v) in existing or key in seen:
                continue
            seen.add(key)
            neg.append(key)
            if len(neg) == n_neg:
                break
    neg = np.array(neg, dtype=np.int64).reshape(-1, 2)
    train_graph = net.without_edges([tuple(e) for e in test_pos.tolist()])
    return EdgeSplit(
        train_graph=train_graph,
        embedding_graph=train_graph.without_edges([tuple(e) for e in train_pos.tolist()]),
        train_pos=train_pos,
        train_neg=neg[n_test:],
        test_pos=test_pos,
        test_neg=neg[:n_test],
        test_fraction=test_fraction,
        seed=seed,
    )


def leakage_audit(split: EdgeSplit, walks=None) -> dict:
    """Overlap counts between test positives and every training structure (all should be 0)."""
    test = _pair_set(split.test_pos)
    und = lambda s: s | {(v, u) for u, v in s}  # noqa: E731
    graph_edges = _pair_set((u, v) for u, v, _ in split.train_graph.edges())
    emb_edges = _pair_set((u, v) for u, v, _ in split.embedding_graph.edges())
    out = {
        "train_graph": len(und(test) & graph_edges),
        "embedding_graph": len(und(test | _pair_set(split.train_pos)) & emb_edges),
        "train_pairs": len(test & _pair_set(split.train_pos)) + len(test & _pair_set(split.train_neg)),
    }
    if walks is not None:
        steps = set()
        w = np.asarray(walks)
        a, b = w[:, :-1].ravel(), w[:, 1:].ravel()
        ok = (a >= 0) & (b >= 0)
        steps = _pair_set(zip(a[ok], b[ok]))
        out["walk_steps"] = len(und(test) & steps)
    return out


def pair_features(vectors: np.ndarray, pairs, operator: str = "hadamard") -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    bad = sorted(set(pairs[(pairs < 0) | (pairs >= len(vectors))].tolist()))
    if bad:
        raise KeyError(f"pairs reference nodes without embeddings: {bad}")
    a, b = vectors[pairs[:, 0]], vectors[pairs[:, 1]]
    if operator == "hadamard":
        return a * b
    if operator == "l1":
        return np.abs(a - b)
    if operator == "l2":
        return (a - b) ** 2
    if operator == "average":
        return (a + b) / 2.0
    raise ValueError(f"unknown pair operator {operator!r}; choose from {PAIR_OPERATORS}")


@dataclass
class LinkClassifier:
    """Column standardisation followed by an Mlp with a sigmoid output."""
    mean: np.ndarray
    scale: np.ndarray
    mlp: Mlp
    history: list = field(default_factory=list)

    def predict(self, x) -> np.ndarray:
        return self.mlp.predict((np.asarray(x, dtype=np.float64) - self.mean) / self.scale).ravel()


def train_link_classifier(x, y, classifier: str = "logistic", seed: int = 0, epochs: int = 50,
                          learning_rate: float = 1e-3, batch_size: int = 32,
                          hidden: int = 20) -> LinkClassifier:
    x = check_finite(np.asarray(x, dtype=np.float64), "classifier inputs")
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(np.unique(y)) < 2:
        raise ValueError("classifier needs both positive and negative rows")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    rng = derive_rng(seed, "link-classifier")
    d = x.shape[1]
    if classifier == "logistic":
        mlp = Mlp([d, 1], ["sigmoid"], rng=rng)
    elif classifier == "mlp":
        mlp = Mlp([d, hidden, 1], ["relu", "sigmoid"], rng=rng)
    else:
        raise ValueError(f"unknown classifier {classifier!r}")
    hist = fit_binary(mlp, (x - mean) / scale, y, epochs=epochs, learning_rate=learning_rate,
                      batch_size=batch_size, rng=rng)
    return LinkClassifier(mean, scale, mlp, hist)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate(p, y) -> dict:
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    pc = np.clip(p, 1e-12, 1 - 1e-12)
    return {
        "loss": float(-np.mean(y * np.log(pc) + (1 - y) * np.log1p(-pc))),
        "accuracy": float(np.mean((p >= 0.5) == (y == 1))),
        "auc": roc_auc(p, y),
    }


@dataclass(frozen=True)
class LinkExperimentReport:
    model: str
    features: str
    loss: float
    accuracy: float
    auc: float
    seed: int
    digest: str = ""

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0 or self.loss < 0:
            raise ValueError("accuracy must lie in [0, 1] and loss be non-negative")


@dataclass
class ExperimentSettings:
    test_fraction: float = 0.1
    train_fraction: float = 0.4
    walk: embed.WalkConfig = field(default_factory=embed.WalkConfig)
    node2vec_dim: int = 128
    sage: embed.SageConfig = field(default_factory=embed.SageConfig)
    attri2vec: embed.Attri2VecConfig = field(default_factory=embed.Attri2VecConfig)
    classifier_epochs: int = 50
    classifier_lr: float = 1e-3
    classifier_batch: int = 32
    pair_operator: str = "hadamard"


@dataclass
class ExperimentData:
    """Everything the experiment needs that does not depend on the seed."""
    referral: Network
    professional: Network
    people: pd.DataFrame
    social: dict

    @classmethod
    def build(cls, consultations, profiles, max_gap_days=30, study_end_year=2017):
        inter = extract_interactions(consultations, profiles, max_gap_days=max_gap_days)
        referral = build_referral_network(inter)
        prof = build_professional_network(profiles)
        table = centrality_table(prof)
        return cls(referral, prof, physician_frame(profiles, study_end_year),
                   embed.social_lookup(prof, table))

    def features(self, feature_set: str) -> np.ndarray:
        return embed.node_features(self.referral, self.people, feature_set, self.social)


class ExperimentRun:
    """One seed: a split plus embeddings cached across feature sets where they coincide."""

    def __init__(self, data: ExperimentData, seed: int, settings: ExperimentSettings | None = None):
        self.data = data
        self.seed = seed
        self.settings = settings or ExperimentSettings()
        self.split = split_edges(data.referral, self.settings.test_fraction,
                                 seed=derive_seed(seed, "split"),
                                 train_fraction=self.settings.train_fraction)
        self._node2vec = None

    def embedding(self, model: str, feature_set: str) -> np.ndarray:
        s, g = self.settings, self.split.embedding_graph
        if model == "node2vec":
            if self._node2vec is None:
                self._node2vec, _ = embed.train_node2vec(g, s.walk, seed=derive_seed(self.seed, "node2vec"),
                                                         dim=s.node2vec_dim)
            return self._node2vec
        x = self.data.features(feature_set)
        if model == "graphsage":
            return embed.train_graphsage(g, x, s.sage, seed=derive_seed(self.seed, "graphsage", feature_set))[0]
        if model == "attri2vec":
            return embed.train_attri2vec(g, x, s.attri2vec, seed=derive_seed(self.seed, "attri2vec", feature_set))[0]
        raise ValueError(f"unknown model {model!r}; choose from {embed.MODELS}")

    def design(self, model: str, feature_set: str, pairs) -> np.ndarray:
        vecs = self.embedding(model, feature_set)
        rows = pair_features(vecs, pairs, self.settings.pair_operator)
        if model == "node2vec":
            # walk embeddings carry no node attributes; append endpoint features
            x = self.data.features(feature_set)
            rows = np.hstack([rows, x[pairs[:, 0]], x[pairs[:, 1]]])
        return rows

    def run(self, model: str, feature_set: str, digest: str = ""):
        """Returns ``(report, predictions frame)``."""
        s = self.settings
        tr_pairs, tr_y = self.split.train_rows()
        te_pairs, te_y = self.split.test_rows()
        clf = train_link_classifier(
            self.design(model, feature_set, tr_pairs), tr_y, CLASSIFIER_FOR[model],
            seed=derive_seed(self.seed, "classifier", model, feature_set),
            epochs=s.classifier_epochs, learning_rate=s.classifier_lr, batch_size=s.classifier_batch)
        p = clf.predict(self.design(model, feature_set, te_pairs))
        m = evaluate(p, te_y)
        report = LinkExperimentReport(model, feature_set, m["loss"], m["accuracy"], m["auc"],
                                      self.seed, digest)
        ids = self.data.referral.external_ids
        preds = pd.DataFrame({
            "model": model, "features": feature_set, "seed": self.seed,
            "source_id": [ids[u] for u in te_pairs[:, 0]],
            "target_id": [ids[v] for v in te_pairs[:, 1]],
            "label": te_y.astype(int), "probability": p,
            "predicted": (p >= 0.5).astype(int),
        })
        return report, preds


def run_experiment(consultations, profiles, model: str, feature_set: str, seeds,
                   settings: ExperimentSettings | None = None, max_gap_days=30):
    data = ExperimentData.build(consultations, profiles, max_gap_days=max_gap_days)
    reports = [ExperimentRun(data, s, settings).run(model, feature_set)[0] for s in seeds]
    return reports, summarize(reports)


def summarize(reports) -> pd.DataFrame:
    """Mean and sample sd of each metric per (model, features)."""
    frame = pd.DataFrame([r.__dict__ for r in reports])
    agg = frame.groupby(["model", "features"], sort=True)[["loss", "accuracy", "auc"]]
    out = agg.mean().add_suffix("_mean").join(agg.std(ddof=1).fillna(0.0).add_suffix("_sd"))
    return out.reset_index()


def report_csv(reports) -> str:
    buf = io.StringIO()
    buf.write(",".join(REPORT_COLUMNS) + "\n")
    for r in reports:
        buf.write(f"{r.model},{r.features},{format_number(r.loss)},{format_number(r.accuracy)},"
                  f"{format_number(r.auc)},{r.seed}\n")
    return buf.getvalue()
