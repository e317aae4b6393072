import datetime as dt

import numpy as np
import pytest

from refnet.ingest import (IngestError, StudyWindow, classify_role, load_consultations,
                           load_physicians, physician_frame, write_consultations,
                           write_physicians)

HEADER = "patient_id,physician_id,date,hospital_id\n"
PHYS_HEADER = "physician_id,gender,birth_year,specialty,school,residency,hospitals\n"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_three_valid_rows(tmp_path):
    p = write(tmp_path, "c.csv", HEADER + "a,X,2013-01-01,H\na,Y,2013-01-02,H\nb,X,2014-05-05,H\n")
    table, report = load_consultations(p)
    assert len(table) == 3 and len(report) == 0


def test_impossible_date_rejected(tmp_path):
    p = write(tmp_path, "c.csv", HEADER + "a,X,2020-13-40,H\na,X,2013-01-01,H\n")
    table, report = load_consultations(p)
    assert len(table) == 1
    assert report.rows == [(1, "bad_date")]


def test_out_of_window_rejected(tmp_path):
    p = write(tmp_path, "c.csv", HEADER + "a,X,2011-12-31,H\na,X,2012-01-01,H\n")
    table, report = load_consultations(p, StudyWindow())
    assert len(table) == 1
    assert report.counts == {"out_of_window": 1}


def test_malformed_rows_counted(tmp_path):
    p = write(tmp_path, "c.csv", HEADER + "a,X,2013-01-01\n,X,2013-01-01,H\na,X,13/01/2013,H\n"
              "a,X,2013-01-01,H\n")
    table, report = load_consultations(p)
    assert len(table) == 1
    assert report.counts == {"bad_row": 1, "missing_id": 1, "bad_date": 1}
    assert report.to_csv().splitlines()[0] == "row_number,reason"


def test_accepted_plus_rejected_is_input(fixture_paths):
    table, report = load_consultations(fixture_paths[0], StudyWindow(dt.date(2014, 1, 1),
                                                                     dt.date(2017, 12, 31)))
    assert len(table) + len(report) == 20


def test_missing_file_is_fatal(tmp_path):
    with pytest.raises(IngestError, match="not found"):
        load_consultations(tmp_path / "nope.csv")


def test_bad_header_is_fatal(tmp_path):
    p = write(tmp_path, "c.csv", "patient,physician,date,hospital\n")
    with pytest.raises(IngestError, match="header"):
        load_consultations(p)


def test_sorted_by_patient_then_date(tmp_path):
    p = write(tmp_path, "c.csv", HEADER + "b,X,2013-01-01,H\na,Y,2013-03-01,H\na,X,2013-02-01,H\n")
    table, _ = load_consultations(p)
    assert list(table["patient_id"]) == ["a", "a", "b"]
    assert list(table["physician_id"]) == ["X", "Y", "X"]


def test_comment_lines_skipped(tmp_path):
    p = write(tmp_path, "c.csv", "# provenance line\n" + HEADER + "a,X,2013-01-01,H\n")
    assert len(load_consultations(p)[0]) == 1


def test_fixture_census(fixture_paths):
    profiles, census = load_physicians(fixture_paths[1])
    assert census == {"PC": 3, "SC": 4, "unknown": 1}
    assert [p.physician_id for p in profiles] == ["P1", "P2", "P3", "S1", "S2", "S3", "S4", "U1"]


def test_two_pc_three_sc_census(tmp_path):
    rows = ["A,F,1970,family medicine,,,", "B,M,1971,general practice,,,",
            "C,F,1972,cardiology,,,", "D,M,1973,urology,,,", "E,F,1974,neurology,,,"]
    p = write(tmp_path, "p.csv", PHYS_HEADER + "\n".join(rows) + "\n")
    assert load_physicians(p)[1] == {"PC": 2, "SC": 3, "unknown": 0}


def test_duplicate_physician_is_fatal(tmp_path):
    p = write(tmp_path, "p.csv", PHYS_HEADER + "A,F,1970,cardiology,,,\nA,M,1971,urology,,,\n")
    with pytest.raises(IngestError, match="duplicate"):
        load_physicians(p)


def test_empty_specialty_is_unknown_role():
    assert classify_role("") == "unknown"
    assert classify_role(None) == "unknown"
    assert classify_role(" Family Medicine ") == "PC"
    assert classify_role("cardiology") == "SC"
    assert classify_role("cardiology", primary_care=["cardiology"]) == "PC"


def test_profile_fields(fixture_paths):
    profiles, _ = load_physicians(fixture_paths[1])
    s2 = profiles[4]
    assert s2.hospital_ids == frozenset({"H2", "H3"})
    assert s2.residency_institution == "ResY"
    assert profiles[2].birth_year is None


def test_out_of_range_birth_year_becomes_unknown(tmp_path):
    p = write(tmp_path, "p.csv", PHYS_HEADER + "A,F,1850,cardiology,,,\nB,X,2030,urology,,,\n")
    profiles, _ = load_physicians(p, study_end_year=2017)
    assert profiles[0].birth_year is None and profiles[1].birth_year is None
    assert profiles[1].gender == "unknown"


def test_age_imputed_with_role_median(fixture_paths):
    profiles, _ = load_physicians(fixture_paths[1])
    frame = physician_frame(profiles, study_end_year=2017)
    # P3 has no birth year; PC ages are 47 and 52
    assert frame.loc["P3", "age"] == pytest.approx(49.5)
    assert frame.loc["P3", "age_imputed"] == 1
    assert frame.loc["S4", "gender_code"] == 0 and frame.loc["S1", "gender_code"] == 1


def test_write_then_load_round_trip(tmp_path, fixture_data):
    table, profiles = fixture_data
    write_consultations(table, tmp_path / "c.csv", header_comment="test")
    write_physicians(profiles, tmp_path / "p.csv")
    again, report = load_consultations(tmp_path / "c.csv")
    assert len(report) == 0
    assert again.equals(table)
    assert load_physicians(tmp_path / "p.csv")[0] == profiles


def test_shuffled_input_gives_same_table(tmp_path, fixture_paths):
    lines = fixture_paths[0].read_text().splitlines()
    body = lines[1:]
    rng = np.random.default_rng(3)
    shuffled = [body[i] for i in rng.permutation(len(body))]
    p = write(tmp_path, "c.csv", "\n".join([lines[0], *shuffled]) + "\n")
    assert load_consultations(p)[0].equals(load_consultations(fixture_paths[0])[0])
