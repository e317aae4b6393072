"""Pair-level referral classifier and exact Shapley attributions."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .graph import format_number
from .numkit import Mlp, derive_rng, fit_binary

CENTRALITY_FEATURES = ("degree", "eigen", "betw")
BASE_FEATURES = (
    "age_sc", "gender_sc", "degree_sc", "eigen_sc", "betw_sc",
    "age_tg", "gender_tg", "degree_tg", "eigen_tg", "betw_tg",
)
ENGINEERED_FEATURES = (
    "degree_sc", "eigen_sc", "betw_sc", "degree_tg", "eigen_tg", "betw_tg", "age_diff", "gender_combo",
)
FEATURE_SETS = {"base": BASE_FEATURES, "engineered": ENGINEERED_FEATURES}
MAX_EXACT_FEATURES = 16
UNKNOWN_COMBO = 4
_COMBO = {("F", "F"): 0, ("M", "M"): 1, ("M", "F"): 2, ("F", "M"): 3}

REPORT_FOOTER = (
    "Note: referral pairs share physicians, so rows are not independent draws. "
    "Treat these attributions as local descriptions of this classifier's behaviour, "
    "not as causal effects."
)


def gender_combo(pc_gender: str, sc_gender: str) -> int:
    """Code the (referring, receiving) gender pair; 4 when either is unknown."""
    return _COMBO.get((pc_gender, sc_gender), UNKNOWN_COMBO)


def engineered_features(pc: dict, sc: dict) -> dict:
    """One engineered row from two endpoint records with age, gender and centralities."""
    row = {f"{c}_sc": pc[c] for c in CENTRALITY_FEATURES}
    row.update({f"{c}_tg": sc[c] for c in CENTRALITY_FEATURES})
    row["age_diff"] = abs(pc["age"] - sc["age"])
    row["gender_combo"] = gender_combo(pc["gender"], sc["gender"])
    return row


def pair_feature_frame(pairs, people: pd.DataFrame, social: dict, feature_set: str = "base",
                       drop_unknown_gender: bool = True) -> pd.DataFrame:
    """Feature rows for ``(pc_id, sc_id)`` pairs.

    ``people`` is the physician frame (age, gender, gender_code) indexed by id;
    ``social`` maps id -> (degree, eigenvector, betweenness). Engineered rows
    with an unknown gender are dropped unless ``drop_unknown_gender`` is off.
    """
    if feature_set not in FEATURE_SETS:
        raise ValueError(f"unknown feature set {feature_set!r}")
    pairs = list(pairs)
    pc_ids = [p for p, _ in pairs]
    sc_ids = [s for _, s in pairs]
    cols = {"pc_id": pc_ids, "sc_id": sc_ids}
    for side, ids in (("sc", pc_ids), ("tg", sc_ids)):
        sub = people.reindex(ids)
        cent = np.array([social.get(i, (np.nan,) * 3) for i in ids], dtype=float).reshape(len(ids), 3)
        cols[f"age_{side}"] = sub["age"].to_numpy(dtype=float)
        cols[f"gender_{side}"] = sub["gender_code"].to_numpy(dtype=float)
        cols[f"_g_{side}"] = sub["gender"].to_numpy(dtype=object)
        for j, name in enumerate(CENTRALITY_FEATURES):
            cols[f"{name}_{side}"] = cent[:, j]
    frame = pd.DataFrame(cols)
    if feature_set == "engineered":
        frame["age_diff"] = (frame["age_sc"] - frame["age_tg"]).abs()
        frame["gender_combo"] = [gender_combo(a, b) for a, b in zip(frame["_g_sc"], frame["_g_tg"])]
        if drop_unknown_gender:
            frame = frame[frame["gender_combo"] != UNKNOWN_COMBO]
    frame = frame[["pc_id", "sc_id", *FEATURE_SETS[feature_set]]]
    return frame.dropna().reset_index(drop=True)


@dataclass
class PairClassifier:
    """Standardise, then 5-relu / 5-relu / sigmoid."""
    mean: np.ndarray
    scale: np.ndarray
    mlp: Mlp
    history: list

    def __call__(self, x) -> np.ndarray:
        return self.mlp.predict((np.asarray(x, dtype=np.float64) - self.mean) / self.scale).ravel()


def train_pair_classifier(rows, labels, seed: int = 0, epochs: int = 30, hidden=(5, 5),
                          learning_rate: float = 1e-3, batch_size: int = 32) -> PairClassifier:
    x = np.asarray(rows, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise ValueError("classifier needs both positive and negative rows")
    mean, scale = x.mean(axis=0), x.std(axis=0)
    scale[scale == 0] = 1.0
    rng = derive_rng(seed, "pair-classifier")
    sizes = [x.shape[1], *hidden, 1]
    mlp = Mlp(sizes, ["relu"] * len(hidden) + ["sigmoid"], rng=rng)
    hist = fit_binary(mlp, (x - mean) / scale, y, epochs=epochs, learning_rate=learning_rate,
                      batch_size=batch_size, rng=rng)
    return PairClassifier(mean, scale, mlp, hist)


@dataclass(frozen=True)
class ShapleyAttribution:
    values: np.ndarray
    base_value: float
    prediction: float

    @property
    def efficiency_gap(self) -> float:
        return float(abs(self.values.sum() - (self.prediction - self.base_value)))


def _subset_weights(n: int) -> np.ndarray:
    """w[s] = s! (n - s - 1)! / n! for coalition size s."""
    return np.array([math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n)
                     for s in range(n)])


def coalition_values(f, x, background) -> np.ndarray:
    """v(S) for every bitmask S: mean of f over background rows with S taken from x."""
    x = np.asarray(x, dtype=np.float64).ravel()
    bg = np.asarray(background, dtype=np.float64)
    n = x.size
    masks = ((np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
    values = np.empty(2 ** n)
    chunk = max(1, 2 ** 17 // max(len(bg), 1))
    for start in range(0, 2 ** n, chunk):
        m = masks[start:start + chunk]
        z = np.where(m[:, None, :], x[None, None, :], bg[None, :, :])
        out = np.asarray(f(z.reshape(-1, n)), dtype=np.float64).reshape(len(m), len(bg))
        values[start:start + chunk] = out.mean(axis=1)
    return values


def exact_shapley(f, x, background) -> ShapleyAttribution:
    """Exact interventional Shapley values by enumerating all feature subsets."""
    x = np.asarray(x, dtype=np.float64).ravel()
    bg = np.asarray(background, dtype=np.float64)
    if bg.ndim != 2 or len(bg) == 0:
        raise ValueError("background must be a nonempty 2-D array")
    if bg.shape[1] != x.size:
        raise ValueError("background and row have different feature counts")
    n = x.size
    if n > MAX_EXACT_FEATURES:
        raise ValueError(f"{n} features is too many for exact enumeration (limit "
                         f"{MAX_EXACT_FEATURES}); use a sampling estimator instead")
    v = coalition_values(f, x, bg)
    idx = np.arange(2 ** n)
    size = np.array([bin(i).count("1") for i in range(2 ** n)])
    w = _subset_weights(n)
    phi = np.empty(n)
    for i in range(n):
        without = idx[(idx >> i) & 1 == 0]
        phi[i] = np.sum(w[size[without]] * (v[without | (1 << i)] - v[without]))
    return ShapleyAttribution(phi, float(v[0]), float(v[-1]))


@dataclass
class AttributionReport:
    features: tuple
    values: np.ndarray
    base_values: np.ndarray
    predictions: np.ndarray

    def ranking(self, top_k: int | None = None) -> pd.DataFrame:
        mean_abs = np.abs(self.values).mean(axis=0)
        order = sorted(range(len(self.features)), key=lambda j: (-mean_abs[j], self.features[j]))
        frame = pd.DataFrame({
            "feature": [self.features[j] for j in order],
            "mean_abs_phi": mean_abs[order],
            "rank": np.arange(1, len(order) + 1),
        })
        return frame if top_k is None else frame.head(top_k)

    def values_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(["row", *self.features, "base_value", "prediction"]) + "\n")
        for r, (phi, b, p) in enumerate(zip(self.values, self.base_values, self.predictions)):
            buf.write(",".join([str(r), *(format_number(v) for v in phi), format_number(b),
                                format_number(p)]) + "\n")
        return buf.getvalue()

    def ranking_csv(self, top_k: int | None = None) -> str:
        buf = io.StringIO()
        buf.write("feature,mean_abs_phi,rank\n")
        for f, m, r in self.ranking(top_k).itertuples(index=False):
            buf.write(f"{f},{format_number(m)},{r}\n")
        return buf.getvalue()

    def summary(self, top_k: int = 5) -> str:
        lines = ["feature ranking by mean |phi|:"]
        for f, m, r in self.ranking(top_k).itertuples(index=False):
            lines.append(f"  {r:2d}. {f:14s} {m:.6f}")
        lines.append(REPORT_FOOTER)
        return "\n".join(lines) + "\n"


def attribution_report(f, rows, background, features) -> AttributionReport:
    rows = np.asarray(rows, dtype=np.float64)
    out = [exact_shapley(f, r, background) for r in rows]
    return AttributionReport(
        tuple(features),
        np.array([a.values for a in out]).reshape(len(out), len(features)),
        np.array([a.base_value for a in out]),
        np.array([a.prediction for a in out]),
    )


@dataclass
class AttributionRun:
    report: AttributionReport
    classifier: PairClassifier
    heldout_auc: float
    n_rows: int


def run_attribution(data, feature_set: str = "base", seed: int = 0, n_explain: int = 200,
                    background_size: int = 100, epochs: int = 30) -> AttributionRun:
    """Referral edges vs sampled non-edges -> pair classifier -> Shapley ranking.

    ``data`` provides ``referral`` (network), ``people`` and ``social`` as built
    by the link-prediction data stage. Rows are split 80/20; the background is
    drawn from the training part and explained rows from the held-out part.
    """
    from .linkpred import roc_auc, split_edges

    net = data.referral
    ids = net.external_ids
    split = split_edges(net, test_fraction=0.1, seed=seed)
    pos = [(ids[u], ids[v]) for u, v, _ in net.edges()]
    neg = [(ids[u], ids[v]) for u, v in np.vstack([split.test_neg, split.train_neg])]
    rng = derive_rng(seed, "attribution")
    extra = len(pos) - len(neg)
    if extra > 0:
        pcs = [i for i, r in enumerate(net.roles) if r == "PC"]
        scs = [i for i, r in enumerate(net.roles) if r == "SC"]
        taken = set(pos) | set(neg)
        while extra > 0:
            cand = (ids[pcs[rng.integers(len(pcs))]], ids[scs[rng.integers(len(scs))]])
            if cand not in taken:
                taken.add(cand)
                neg.append(cand)
                extra -= 1
    frame = pair_feature_frame(pos + neg, data.people, data.social, feature_set)
    label_of = dict.fromkeys(pos, 1.0)
    y = np.array([label_of.get(k, 0.0) for k in zip(frame["pc_id"], frame["sc_id"])])
    features = FEATURE_SETS[feature_set]
    x = frame[list(features)].to_numpy(dtype=np.float64)
    order = rng.permutation(len(x))
    cut = int(0.8 * len(x))
    tr, te = order[:cut], order[cut:]
    clf = train_pair_classifier(x[tr], y[tr], seed=seed, epochs=epochs)
    auc = roc_auc(clf(x[te]), y[te])
    bg = x[tr[rng.choice(len(tr), size=min(background_size, len(tr)), replace=False)]]
    explain_rows = x[te[:n_explain]]
    return AttributionRun(attribution_report(clf, explain_rows, bg, features), clf, auc, len(x))
