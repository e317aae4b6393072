"""Referral and professional network construction plus exploratory statistics."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.optimize import minimize_scalar

from .graph import Network, format_number

INTERACTION_COLUMNS = ["pc_id", "sc_id", "patient_id", "pc_date", "sc_date", "gap_days"]
BUCKET_EDGES = (7, 14, 30, 60, 90, 180, math.inf)


@dataclass(frozen=True)
class ReferralInteraction:
    pc_id: str
    sc_id: str
    patient_id: str
    pc_date: object
    sc_date: object
    gap_days: int


def _role_map(profiles) -> dict[str, str]:
    if isinstance(profiles, dict):
        return dict(profiles)
    return {p.physician_id: p.role for p in profiles}


def _known_role_sequence(consultations: pd.DataFrame, profiles) -> pd.DataFrame:
    roles = _role_map(profiles)
    seq = consultations[["patient_id", "physician_id", "date"]].copy()
    seq["role"] = seq["physician_id"].map(roles)
    seq = seq[seq["role"].isin(["PC", "SC"])]
    # same-day ties: PC before SC, then physician id
    seq["role_order"] = (seq["role"] == "SC").astype(np.int8)
    seq = seq.sort_values(["patient_id", "date", "role_order", "physician_id"], kind="mergesort")
    return seq.reset_index(drop=True)


def extract_interactions(consultations: pd.DataFrame, profiles, max_gap_days: float | None = 30,
                         rule: str = "consecutive") -> pd.DataFrame:
    """PC-then-SC consultation pairs of the same patient.

    ``rule="consecutive"`` pairs an SC visit with the PC visit immediately
    before it in the patient's known-role sequence. ``rule="next_sc"`` pairs
    every PC visit with the first SC visit after it, even across other PC
    visits. ``max_gap_days=None`` disables the gap cap.
    """
    if rule not in ("consecutive", "next_sc"):
        raise ValueError(f"unknown interaction rule {rule!r}")
    seq = _known_role_sequence(consultations, profiles)
    if seq.empty:
        return pd.DataFrame(columns=INTERACTION_COLUMNS)

    patient = seq["patient_id"].to_numpy()
    is_sc = (seq["role"] == "SC").to_numpy()
    n = len(seq)
    if rule == "consecutive":
        src = np.arange(n - 1)
        dst = src + 1
        ok = (patient[src] == patient[dst]) & ~is_sc[src] & is_sc[dst]
    else:
        sc_pos = pd.Series(np.where(is_sc, np.arange(n), np.nan))
        nxt = sc_pos.groupby(seq["patient_id"]).shift(-1)
        nxt = nxt.groupby(seq["patient_id"]).bfill().to_numpy()
        src = np.arange(n)
        ok = ~is_sc & ~np.isnan(nxt)
        dst = np.where(ok, np.nan_to_num(nxt), 0).astype(np.int64)
    src, dst = src[ok], dst[ok]

    dates = seq["date"].to_numpy()
    gap = ((dates[dst] - dates[src]) / np.timedelta64(1, "D")).astype(np.int64)
    keep = gap >= 0
    if max_gap_days is not None and not math.isinf(max_gap_days):
        keep &= gap <= max_gap_days
    src, dst, gap = src[keep], dst[keep], gap[keep]

    phys = seq["physician_id"].to_numpy()
    out = pd.DataFrame({
        "pc_id": phys[src],
        "sc_id": phys[dst],
        "patient_id": patient[src],
        "pc_date": dates[src],
        "sc_date": dates[dst],
        "gap_days": gap,
    })
    out = out.sort_values(["patient_id", "pc_date", "sc_date", "pc_id", "sc_id"], kind="mergesort")
    return out.reset_index(drop=True)


def build_referral_network(interactions: pd.DataFrame, profiles=None) -> Network:
    """Directed bipartite PC->SC network; weight = distinct (patient, pc_date, sc_date) events."""
    if len(interactions) == 0:
        return Network(0, directed=True, roles=[], external_ids=[])
    events = interactions.drop_duplicates(["pc_id", "sc_id", "patient_id", "pc_date", "sc_date"])
    counts = events.groupby(["pc_id", "sc_id"]).size()
    pcs = set(events["pc_id"])
    ids = sorted(pcs | set(events["sc_id"]))
    index = {e: i for i, e in enumerate(ids)}
    roles = ["PC" if e in pcs else "SC" for e in ids]
    net = Network(len(ids), directed=True, roles=roles, external_ids=ids)
    for (pc, sc), w in counts.items():
        net.add_edge(index[pc], index[sc], float(w))
    return net


def shared_background(profiles) -> tuple[list, np.ndarray]:
    """Pairwise shared-attribute counts over school, residency and any common hospital."""
    profiles = [p for p in profiles]
    n = len(profiles)

    def same(values):
        codes, uniq = pd.factorize(pd.Series(values, dtype=object), use_na_sentinel=True)
        eq = codes[:, None] == codes[None, :]
        return eq & (codes >= 0)[:, None]

    school = same([p.school for p in profiles])
    residency = same([p.residency_institution for p in profiles])
    hosp_ids = sorted({h for p in profiles for h in p.hospital_ids})
    hidx = {h: i for i, h in enumerate(hosp_ids)}
    rows = [i for i, p in enumerate(profiles) for _ in p.hospital_ids]
    cols = [hidx[h] for p in profiles for h in p.hospital_ids]
    inc = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, max(len(hosp_ids), 1)))
    common = (inc @ inc.T).toarray() > 0
    weight = school.astype(np.int64) + residency + common
    np.fill_diagonal(weight, 0)
    return profiles, weight


def build_professional_network(profiles) -> Network:
    """Undirected physician network over PC/SC physicians, weighted by shared background."""
    members = sorted((p for p in profiles if p.role in ("PC", "SC")), key=lambda p: p.physician_id)
    members, weight = shared_background(members)
    net = Network(len(members), directed=False,
                  external_ids=[p.physician_id for p in members])
    iu, ju = np.nonzero(np.triu(weight, k=1))
    for i, j in zip(iu.tolist(), ju.tolist()):
        net.add_edge(i, j, float(weight[i, j]))
    return net


@dataclass(frozen=True)
class IntervalDistribution:
    edges: tuple
    counts: tuple
    cumulative: tuple

    def cumulative_at(self, days: float) -> float:
        return self.cumulative[self.edges.index(days)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("bucket_days,count,cumulative_fraction\n")
        for e, c, f in zip(self.edges, self.counts, self.cumulative):
            label = f">{self.edges[-2]}" if math.isinf(e) else str(e)
            buf.write(f"{label},{c},{f:.10f}\n")
        return buf.getvalue()


def interval_distribution(interactions, edges=BUCKET_EDGES) -> IntervalDistribution:
    gaps = np.asarray(interactions["gap_days"] if isinstance(interactions, pd.DataFrame)
                      else interactions, dtype=float)
    if gaps.size == 0:
        raise ValueError("interval distribution undefined for zero interactions")
    counts, lo = [], -math.inf
    for e in edges:
        counts.append(int(np.count_nonzero((gaps > lo) & (gaps <= e))))
        lo = e
    cum = np.cumsum(counts) / gaps.size
    cum[-1] = 1.0
    return IntervalDistribution(tuple(edges), tuple(counts), tuple(float(c) for c in cum))


def physicians_per_patient_histogram(consultations: pd.DataFrame) -> dict[int, int]:
    per_patient = consultations.groupby("patient_id")["physician_id"].nunique()
    hist = per_patient.value_counts().sort_index()
    return {int(k): int(v) for k, v in hist.items()}


def fit_power_law_exponent(hist: dict[int, int], k_min: int = 1) -> float:
    """Discrete power-law MLE on [k_min, max observed k]."""
    ks = np.array([k for k in hist if k >= k_min], dtype=float)
    ns = np.array([hist[int(k)] for k in ks], dtype=float)
    if ns.sum() == 0:
        raise ValueError("empty histogram")
    support = np.arange(k_min, int(ks.max()) + 1, dtype=float)
    log_sum = float(np.sum(ns * np.log(ks)))
    total = float(ns.sum())

    def nll(a):
        return a * log_sum + total * np.log(np.sum(support ** -a))

    res = minimize_scalar(nll, bounds=(1.0001, 10.0), method="bounded",
                          options={"xatol": 1e-8})
    return float(res.x)


def histogram_csv(hist: dict[int, int]) -> str:
    lines = ["physicians,patients"] + [f"{k},{v}" for k, v in sorted(hist.items())]
    return "\n".join(lines) + "\n"


def specialty_year_counts(consultations: pd.DataFrame, profiles) -> pd.DataFrame:
    """Consultations per specialty and year."""
    spec = {p.physician_id: (p.specialty or "unknown") for p in profiles}
    frame = pd.DataFrame({
        "year": pd.to_datetime(consultations["date"]).dt.year,
        "specialty": consultations["physician_id"].map(spec).fillna("unknown"),
    })
    out = frame.groupby(["year", "specialty"]).size().rename("consultations").reset_index()
    return out.sort_values(["year", "specialty"]).reset_index(drop=True)


def birth_decade_by_school(profiles) -> pd.DataFrame:
    """Physician counts per school, birth decade and gender."""
    rows = [
        (p.school or "unknown", (p.birth_year // 10) * 10, p.gender)
        for p in profiles if p.birth_year is not None
    ]
    frame = pd.DataFrame(rows, columns=["school", "birth_decade", "gender"])
    out = frame.groupby(["school", "birth_decade", "gender"]).size().rename("physicians")
    return out.reset_index().sort_values(["school", "birth_decade", "gender"]).reset_index(drop=True)


def frame_csv(frame: pd.DataFrame) -> str:
    buf = io.StringIO()
    out = frame.copy()
    for col in out.columns:
        if out[col].dtype.kind == "f":
            out[col] = out[col].map(format_number)
    out.to_csv(buf, index=False, lineterminator="\n")
    return buf.getvalue()
