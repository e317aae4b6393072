"""Synthetic consultation data with planted referral mechanisms.

Specialist choice for a referral from primary-care physician ``pc`` is
proportional to

    exp(alpha * shared(pc, sc) + gamma * log(1 + popularity(sc)) + beta * same_gender(pc, sc))

where ``shared`` counts common school, residency and hospital, and
``popularity`` is the specialist's degree in the professional network.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .ingest import CONSULTATION_COLUMNS, PhysicianProfile, StudyWindow, sort_consultations
from .netbuild import build_professional_network, shared_background
from .numkit import derive_rng

PC_SPECIALTIES = ("family medicine", "general practice")
SC_SPECIALTIES = (
    "cardiology", "dermatology", "orthopedics", "ophthalmology", "gastroenterology",
    "neurology", "urology", "psychiatry", "endocrinology", "otolaryngology",
)


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_pc: int = 250
    n_sc: int = 700
    n_unknown: int = 50
    n_hospitals: int = 20
    n_schools: int = 20
    n_residencies: int = 30
    affiliation_skew: float = 1.0     # Zipf exponent for institution sizes
    n_regions: int = 20
    region_skew: float = 1.5          # Zipf exponent for region sizes
    region_loyalty: float = 0.8       # chance an affiliation is drawn from the home region
    extra_hospital_rate: float = 0.3  # Poisson mean of additional hospitals
    max_hospitals: int = 3
    alpha: float = 0.8
    gamma: float = 0.5
    beta: float = 0.0
    n_consultations: int = 200_000
    visits_exponent: float = 2.5
    max_visits: int = 30
    referral_prob: float = 0.5
    unknown_visit_prob: float = 0.05
    gap_target: float = 0.22          # share of referral gaps within gap_short days
    gap_short: int = 30
    gap_max: int = 365
    missing_birth_year: float = 0.02
    start: dt.date = dt.date(2012, 1, 1)
    end: dt.date = dt.date(2017, 12, 31)
    seed: int = 0

    def __post_init__(self):
        if self.n_pc <= 0 or self.n_sc <= 0:
            raise SynthError("need at least one PC and one SC physician")
        if self.n_unknown < 0 or self.n_consultations <= 0:
            raise SynthError("counts must be positive")
        for name in ("n_hospitals", "n_schools", "n_residencies", "max_visits", "max_hospitals",
                     "n_regions"):
            if getattr(self, name) <= 0:
                raise SynthError(f"{name} must be positive")
        for name in ("alpha", "beta", "referral_prob", "unknown_visit_prob", "gap_target",
                     "missing_birth_year", "region_loyalty"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SynthError(f"{name} must lie in [0, 1]")
        if self.gamma < 0:
            raise SynthError("gamma must be non-negative")
        if self.visits_exponent <= 1:
            raise SynthError("visits_exponent must exceed 1")
        if not 0 <= self.gap_short < self.gap_max:
            raise SynthError("need 0 <= gap_short < gap_max")
        if self.end <= self.start:
            raise SynthError("empty study window")

    def window(self) -> StudyWindow:
        return StudyWindow(self.start, self.end)

    def items(self) -> list[tuple[str, str]]:
        return [(f.name, str(getattr(self, f.name))) for f in dataclasses.fields(self)]


@dataclass
class SynthData:
    config: SynthConfig
    profiles: list
    consultations: pd.DataFrame
    propensity: pd.DataFrame
    referrals: pd.DataFrame

    def manifest(self) -> pd.DataFrame:
        rows = self.config.items()
        rows += [
            ("realized_consultations", str(len(self.consultations))),
            ("realized_patients", str(self.consultations["patient_id"].nunique())),
            ("realized_referrals", str(len(self.referrals))),
        ]
        return pd.DataFrame(rows, columns=["key", "value"])


def _zipf_weights(k: int, skew: float) -> np.ndarray:
    w = 1.0 / np.arange(1, k + 1) ** skew
    return w / w.sum()


class _Institutions:
    """Institutions of one kind, assigned round-robin to regions."""

    def __init__(self, prefix: str, count: int, cfg: SynthConfig):
        self.names = [f"{prefix}{i + 1:02d}" for i in range(count)]
        self.weights = _zipf_weights(count, cfg.affiliation_skew)
        self.by_region = [np.arange(r, count, cfg.n_regions) for r in range(cfg.n_regions)]
        self.loyalty = cfg.region_loyalty

    def draw(self, region: int, size: int, rng) -> list[str]:
        local = self.by_region[region]
        picked: list[int] = []
        while len(picked) < size:
            if local.size and rng.random() < self.loyalty:
                w = self.weights[local] / self.weights[local].sum()
                j = int(local[rng.choice(local.size, p=w)])
            else:
                j = int(rng.choice(len(self.names), p=self.weights))
            if j not in picked:
                picked.append(j)
        return [self.names[j] for j in picked]


def make_physicians(cfg: SynthConfig) -> list[PhysicianProfile]:
    """Demographics plus school, residency and hospitals clustered by a latent region."""
    rng = derive_rng(cfg.seed, "physicians")
    hospitals = _Institutions("H", cfg.n_hospitals, cfg)
    schools = _Institutions("SCH", cfg.n_schools, cfg)
    residencies = _Institutions("RES", cfg.n_residencies, cfg)
    region_w = _zipf_weights(cfg.n_regions, cfg.region_skew)
    groups = [("PC", cfg.n_pc), ("SC", cfg.n_sc), ("UN", cfg.n_unknown)]
    out = []
    for prefix, count in groups:
        for i in range(count):
            region = int(rng.choice(cfg.n_regions, p=region_w))
            gender = "F" if rng.random() < 0.5 else "M"
            birth = int(rng.integers(1950, 1991))
            if rng.random() < cfg.missing_birth_year:
                birth = None
            if prefix == "PC":
                spec = PC_SPECIALTIES[int(rng.integers(len(PC_SPECIALTIES)))]
                role = "PC"
            elif prefix == "SC":
                spec = SC_SPECIALTIES[int(rng.integers(len(SC_SPECIALTIES)))]
                role = "SC"
            else:
                spec, role = None, "unknown"
            n_h = min(1 + int(rng.poisson(cfg.extra_hospital_rate)), cfg.max_hospitals, cfg.n_hospitals)
            out.append(PhysicianProfile(
                physician_id=f"{prefix}{i + 1:04d}",
                gender=gender,
                birth_year=birth,
                role=role,
                specialty=spec,
                school=schools.draw(region, 1, rng)[0],
                residency_institution=residencies.draw(region, 1, rng)[0],
                hospital_ids=frozenset(hospitals.draw(region, n_h, rng)),
            ))
    return sorted(out, key=lambda p: p.physician_id)


def propensity_table(cfg: SynthConfig, profiles) -> tuple[list, list, np.ndarray, pd.DataFrame]:
    """(pcs, scs, propensity matrix, long table with its components)."""
    pcs = [p for p in profiles if p.role == "PC"]
    scs = [p for p in profiles if p.role == "SC"]
    if not pcs or not scs:
        raise SynthError("need at least one PC and one SC physician")
    _, shared = shared_background(pcs + scs)
    shared = shared[: len(pcs), len(pcs):].astype(float)
    prof = build_professional_network(profiles)
    deg = {e: prof.degree(i) for i, e in enumerate(prof.external_ids)}
    popularity = np.array([deg[s.physician_id] for s in scs], dtype=float)
    same_gender = np.array([[float(a.gender == b.gender) for b in scs] for a in pcs])
    logit = cfg.alpha * shared + cfg.gamma * np.log1p(popularity)[None, :] + cfg.beta * same_gender
    prop = np.exp(logit - logit.max())
    table = pd.DataFrame({
        "pc_id": np.repeat([p.physician_id for p in pcs], len(scs)),
        "sc_id": np.tile([s.physician_id for s in scs], len(pcs)),
        "shared": shared.ravel().astype(int),
        "popularity": np.tile(popularity, len(pcs)).astype(int),
        "same_gender": same_gender.ravel().astype(int),
        "propensity": (prop / prop.sum(axis=1, keepdims=True)).ravel(),
    })
    return pcs, scs, prop, table


def _pick_rows(cum: np.ndarray, rows: np.ndarray, rng) -> np.ndarray:
    """Categorical draw per requested row of a row-cumulative weight matrix."""
    if rows.size == 0:
        return rows
    c = cum[rows]
    u = rng.random(rows.size) * c[:, -1]
    return np.minimum((c < u[:, None]).sum(axis=1), cum.shape[1] - 1)


def sample_referrals(cfg: SynthConfig, n: int, seed: int | None = None) -> np.ndarray:
    """Specialist choice counts for ``n`` referrals from uniformly chosen PCs."""
    profiles = make_physicians(cfg)
    pcs, scs, prop, _ = propensity_table(cfg, profiles)
    rng = derive_rng(cfg.seed if seed is None else seed, "sample-referrals")
    src = rng.integers(len(pcs), size=n)
    picks = _pick_rows(np.cumsum(prop, axis=1), src, rng)
    return np.bincount(picks, minlength=len(scs))


def _visit_counts(cfg: SynthConfig, rng) -> np.ndarray:
    k = np.arange(1, cfg.max_visits + 1)
    pk = k ** -cfg.visits_exponent
    pk /= pk.sum()
    mean = float((k * pk).sum())
    draw = rng.choice(k, size=int(cfg.n_consultations / mean * 1.2) + 10, p=pk)
    while draw.sum() < cfg.n_consultations:
        draw = np.concatenate([draw, rng.choice(k, size=draw.size // 2 + 10, p=pk)])
    total = np.cumsum(draw)
    last = int(np.searchsorted(total, cfg.n_consultations))
    counts = draw[: last + 1].copy()
    counts[-1] -= total[last] - cfg.n_consultations
    return counts


def generate(cfg: SynthConfig) -> SynthData:
    """Physicians, consultations, propensity table and ground-truth referrals."""
    profiles = make_physicians(cfg)
    pcs, scs, prop, table = propensity_table(cfg, profiles)
    unknown = [p for p in profiles if p.role == "unknown"]
    rng = derive_rng(cfg.seed, "journeys")
    counts = _visit_counts(cfg, rng)
    n_pat, width = counts.size, cfg.max_visits
    n_pc, n_sc = len(pcs), len(scs)

    # role codes: 0 = PC, 1 = SC, 2 = unknown; phys indexes the role's list
    role = np.full((n_pat, width), -1, dtype=np.int8)
    phys = np.full((n_pat, width), -1, dtype=np.int64)
    cum = np.cumsum(prop, axis=1)
    role[:, 0] = 0
    for t in range(width):
        live = np.flatnonzero(counts > t)
        if live.size == 0:
            break
        if t > 0:
            prev = role[live, t - 1]
            to_sc = (prev == 0) & (rng.random(live.size) < cfg.referral_prob)
            role[live, t] = np.where(to_sc, 1, 0)
            if unknown:
                last = (counts[live] == t + 1) & (rng.random(live.size) < cfg.unknown_visit_prob)
                role[live[last], t] = 2
        todo = live
        while todo.size:
            r = role[todo, t]
            pick = np.empty(todo.size, dtype=np.int64)
            is_pc, is_sc, is_un = r == 0, r == 1, r == 2
            pick[is_pc] = rng.integers(n_pc, size=int(is_pc.sum()))
            if is_sc.any():
                pick[is_sc] = _pick_rows(cum, phys[todo[is_sc], t - 1], rng)
            if is_un.any():
                pick[is_un] = rng.integers(len(unknown), size=int(is_un.sum()))
            phys[todo, t] = pick
            # distinct physicians within a patient: resample collisions until the pool runs out
            same_role = role[todo, :t] == r[:, None]
            earlier = same_role & (phys[todo, :t] == pick[:, None])
            pool = np.array([n_pc, n_sc, len(unknown)])[r]
            todo = todo[earlier.any(axis=1) & (same_role.sum(axis=1) < pool)]

    # gaps: referral (PC -> SC) gaps are mixed short/long; others 1..gap_short days
    gaps = np.zeros((n_pat, width), dtype=np.int64)
    span_limit = (cfg.end - cfg.start).days
    pending = np.arange(n_pat)
    while pending.size:
        ref = (role[pending, 1:] == 1) & (role[pending, :-1] == 0)
        short = rng.random(ref.shape) < cfg.gap_target
        g_ref = np.where(short, rng.integers(0, cfg.gap_short + 1, size=ref.shape),
                         rng.integers(cfg.gap_short + 1, cfg.gap_max + 1, size=ref.shape))
        g_other = rng.integers(1, cfg.gap_short + 1, size=ref.shape)
        g = np.where(ref, g_ref, g_other)
        g[np.arange(width - 1)[None, :] >= (counts[pending] - 1)[:, None]] = 0
        gaps[pending, 1:] = g
        span = g.sum(axis=1)
        pending = pending[span > span_limit]
    offsets = np.cumsum(gaps, axis=1)
    span = offsets[np.arange(n_pat), counts - 1]
    start = (rng.random(n_pat) * (span_limit - span + 1)).astype(np.int64)
    day = start[:, None] + offsets

    mask = np.arange(width)[None, :] < counts[:, None]
    pat_idx = np.broadcast_to(np.arange(n_pat)[:, None], mask.shape)[mask]
    r_flat, p_flat, d_flat = role[mask], phys[mask], day[mask]
    pools = (pcs, scs, unknown)
    ids = np.empty(r_flat.size, dtype=object)
    hosp = np.empty(r_flat.size, dtype=object)
    hosp_rng = derive_rng(cfg.seed, "hospital-choice")
    hchoice = hosp_rng.random(r_flat.size)
    for code, pool in enumerate(pools):
        sel = r_flat == code
        if not sel.any():
            continue
        names = np.array([p.physician_id for p in pool], dtype=object)
        hlists = [sorted(p.hospital_ids) for p in pool]
        ids[sel] = names[p_flat[sel]]
        hosp[sel] = [hlists[i][int(u * len(hlists[i]))]
                     for i, u in zip(p_flat[sel].tolist(), hchoice[sel].tolist())]
    base = np.datetime64(cfg.start.isoformat(), "D")
    width_p = len(str(n_pat))
    patient_ids = np.array([f"PT{i + 1:0{width_p}d}" for i in range(n_pat)], dtype=object)
    frame = pd.DataFrame({
        "patient_id": patient_ids[pat_idx],
        "physician_id": ids,
        "date": (base + d_flat.astype("timedelta64[D]")).astype("datetime64[ns]"),
        "hospital_id": hosp,
    })[CONSULTATION_COLUMNS]

    ref = (role[:, 1:] == 1) & (role[:, :-1] == 0)
    pi, ti = np.nonzero(ref)
    pc_names = np.array([p.physician_id for p in pcs], dtype=object)
    sc_names = np.array([s.physician_id for s in scs], dtype=object)
    referrals = pd.DataFrame({
        "patient_id": patient_ids[pi],
        "pc_id": pc_names[phys[pi, ti]],
        "sc_id": sc_names[phys[pi, ti + 1]],
        "pc_date": (base + day[pi, ti].astype("timedelta64[D]")).astype("datetime64[ns]"),
        "sc_date": (base + day[pi, ti + 1].astype("timedelta64[D]")).astype("datetime64[ns]"),
        "gap_days": gaps[pi, ti + 1],
    }).sort_values(["patient_id", "pc_date", "pc_id"], kind="mergesort").reset_index(drop=True)
    return SynthData(cfg, profiles, sort_consultations(frame), table, referrals)
