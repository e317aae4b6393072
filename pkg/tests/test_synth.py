import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from refnet.ingest import load_physicians, write_consultations, write_physicians
from refnet.netbuild import (extract_interactions, fit_power_law_exponent, interval_distribution,
                             physicians_per_patient_histogram, shared_background)
from refnet.synth import (SynthConfig, SynthError, generate, make_physicians, propensity_table,
                          sample_referrals)

SMALL = dict(n_pc=30, n_sc=60, n_unknown=5, n_consultations=6000)


def test_tiny_census(tmp_path):
    data = generate(SynthConfig(n_pc=2, n_sc=3, n_unknown=0, n_consultations=200))
    write_physicians(data.profiles, tmp_path / "p.csv")
    assert load_physicians(tmp_path / "p.csv")[1] == {"PC": 2, "SC": 3, "unknown": 0}


@pytest.mark.parametrize("bad", [dict(n_sc=0), dict(alpha=1.5), dict(gamma=-1.0),
                                 dict(visits_exponent=1.0), dict(n_consultations=0)])
def test_infeasible_config(bad):
    with pytest.raises(SynthError):
        SynthConfig(**bad)


def test_null_mechanism_is_uniform():
    counts = sample_referrals(SynthConfig(alpha=0.0, gamma=0.0, beta=0.0), 100_000)
    assert counts.sum() == 100_000
    assert chisquare(counts).pvalue > 0.01


def test_consultation_count_exact_and_in_window():
    cfg = SynthConfig(**SMALL, seed=2)
    data = generate(cfg)
    assert len(data.consultations) == cfg.n_consultations
    dates = data.consultations["date"]
    assert dates.min().date() >= cfg.start and dates.max().date() <= cfg.end


def test_same_seed_same_output(tmp_path):
    a = generate(SynthConfig(**SMALL, seed=7))
    b = generate(SynthConfig(**SMALL, seed=7))
    write_consultations(a.consultations, tmp_path / "a.csv")
    write_consultations(b.consultations, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert a.profiles == b.profiles
    c = generate(SynthConfig(**SMALL, seed=8))
    assert not c.consultations.equals(a.consultations)


def test_gap_target_round_trip():
    data = generate(SynthConfig(n_consultations=60_000, seed=3))
    inter = extract_interactions(data.consultations, data.profiles, None)
    assert interval_distribution(inter).cumulative_at(30) == pytest.approx(0.22, abs=0.02)


def test_heavy_tail_exponent():
    data = generate(SynthConfig(n_consultations=60_000, seed=3))
    hist = physicians_per_patient_histogram(data.consultations)
    assert fit_power_law_exponent(hist) == pytest.approx(2.5, abs=0.3)


def test_unknown_role_visits_present():
    data = generate(SynthConfig(**SMALL, seed=1))
    unknown = {p.physician_id for p in data.profiles if p.role == "unknown"}
    assert data.consultations["physician_id"].isin(unknown).any()


def _shared_share(alpha, seed=0):
    cfg = SynthConfig(n_pc=60, n_sc=150, n_unknown=0, alpha=alpha, gamma=0.0, seed=seed)
    profiles = make_physicians(cfg)
    pcs, scs, _, _ = propensity_table(cfg, profiles)
    _, shared = shared_background(pcs + scs)
    shared = shared[: len(pcs), len(pcs):]
    counts = sample_referrals(cfg, 50_000)
    return float(np.dot(counts, shared.mean(axis=0)) / counts.sum())


def test_alpha_raises_shared_background_of_referrals():
    shares = [_shared_share(a) for a in (0.0, 0.4, 0.8)]
    assert shares[0] < shares[1] < shares[2]


def test_propensity_rows_normalised():
    cfg = SynthConfig(n_pc=10, n_sc=20, n_unknown=0, beta=0.5)
    _, _, _, table = propensity_table(cfg, make_physicians(cfg))
    sums = table.groupby("pc_id")["propensity"].sum()
    assert np.allclose(sums, 1.0)
    assert set(table.columns) >= {"shared", "popularity", "same_gender", "propensity"}


@settings(max_examples=10)
@given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 2), st.floats(0, 1))
def test_referrals_are_pc_to_sc_and_match_consultations(seed, alpha, gamma, beta):
    cfg = SynthConfig(n_pc=8, n_sc=12, n_unknown=2, n_consultations=400, alpha=alpha,
                      gamma=gamma, beta=beta, seed=seed)
    data = generate(cfg)
    roles = {p.physician_id: p.role for p in data.profiles}
    assert all(roles[p] == "PC" for p in data.referrals["pc_id"])
    assert all(roles[s] == "SC" for s in data.referrals["sc_id"])
    assert (data.referrals["gap_days"] >= 0).all()
    got = extract_interactions(data.consultations, data.profiles, None)
    assert len(got) == len(data.referrals)


def test_patients_see_distinct_physicians():
    data = generate(SynthConfig(**SMALL, seed=5))
    per_patient = data.consultations.groupby("patient_id")["physician_id"]
    assert (per_patient.nunique() == per_patient.size()).all()


def test_tiny_pools_still_terminate():
    data = generate(SynthConfig(n_pc=1, n_sc=1, n_unknown=1, n_consultations=500, seed=1))
    assert len(data.consultations) == 500
