"""Parsing and validation of consultation and physician record files."""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

CONSULTATION_COLUMNS = ["patient_id", "physician_id", "date", "hospital_id"]
PHYSICIAN_COLUMNS = [
    "physician_id", "gender", "birth_year", "specialty", "school", "residency", "hospitals",
]
DEFAULT_PRIMARY_CARE = ("family medicine", "general practice")
GENDER_CODE = {"F": 0, "M": 1}

_ISO_DATE = re.compile(r"^\d{4}-\d{2}-\d{2}$")


class IngestError(Exception):
    pass


@dataclass(frozen=True)
class StudyWindow:
    start: dt.date = dt.date(2012, 1, 1)
    end: dt.date = dt.date(2017, 12, 31)

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError("study window ends before it starts")


@dataclass(frozen=True)
class ConsultationRecord:
    patient_id: str
    physician_id: str
    date: dt.date
    hospital_id: str


@dataclass(frozen=True)
class PhysicianProfile:
    physician_id: str
    gender: str = "unknown"
    birth_year: int | None = None
    role: str = "unknown"
    specialty: str | None = None
    school: str | None = None
    residency_institution: str | None = None
    hospital_ids: frozenset[str] = field(default_factory=frozenset)


@dataclass
class RejectionReport:
    rows: list[tuple[int, str]] = field(default_factory=list)

    def add(self, row_number: int, reason: str) -> None:
        self.rows.append((row_number, reason))

    @property
    def counts(self) -> dict[str, int]:
        return dict(Counter(r for _, r in self.rows))

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("row_number,reason\n")
        for n, reason in sorted(self.rows):
            buf.write(f"{n},{reason}\n")
        return buf.getvalue()


def _data_lines(path):
    path = Path(path)
    if not path.exists():
        raise IngestError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        # provenance comment lines are allowed before the header
        lines = [ln for ln in fh if not ln.startswith("#")]
    return csv.reader(lines)


def load_consultations(path, window: StudyWindow | None = None):
    """Read a consultations CSV.

    Returns ``(table, report)``: a DataFrame sorted by patient, date and
    physician, and a :class:`RejectionReport` of dropped rows. Malformed
    rows are rejected, never fatal; a bad header is.
    """
    window = window or StudyWindow()
    reader = _data_lines(path)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != CONSULTATION_COLUMNS:
        raise IngestError(f"malformed consultations header: {header!r}")

    report = RejectionReport()
    keep_rows, keep_numbers = [], []
    for n, row in enumerate(reader, start=1):
        if len(row) != len(CONSULTATION_COLUMNS):
            report.add(n, "bad_row")
            continue
        row = [c.strip() for c in row]
        if not row[0] or not row[1] or not row[3]:
            report.add(n, "missing_id")
            continue
        if not _ISO_DATE.match(row[2]):
            report.add(n, "bad_date")
            continue
        keep_rows.append(row)
        keep_numbers.append(n)

    table = pd.DataFrame(keep_rows, columns=CONSULTATION_COLUMNS)
    dates = pd.to_datetime(table["date"], format="%Y-%m-%d", errors="coerce")
    bad = dates.isna().to_numpy()
    lo, hi = pd.Timestamp(window.start), pd.Timestamp(window.end)
    outside = ~bad & ((dates < lo) | (dates > hi)).to_numpy()
    numbers = np.asarray(keep_numbers, dtype=np.int64)
    for n in numbers[bad]:
        report.add(int(n), "bad_date")
    for n in numbers[outside]:
        report.add(int(n), "out_of_window")
    table["date"] = dates
    table = table[~bad & ~outside]
    table = sort_consultations(table)
    if len(report):
        log.info("rejected %d consultation rows: %s", len(report), report.counts)
    return table, report


def sort_consultations(table: pd.DataFrame) -> pd.DataFrame:
    out = table.sort_values(CONSULTATION_COLUMNS[:1] + ["date", "physician_id", "hospital_id"],
                            kind="mergesort")
    return out.reset_index(drop=True)


def consultations_frame(records) -> pd.DataFrame:
    """Table from an iterable of :class:`ConsultationRecord`."""
    rows = [(r.patient_id, r.physician_id, pd.Timestamp(r.date), r.hospital_id) for r in records]
    table = pd.DataFrame(rows, columns=CONSULTATION_COLUMNS)
    table["date"] = pd.to_datetime(table["date"])
    return sort_consultations(table)


def classify_role(specialty: str | None, primary_care=DEFAULT_PRIMARY_CARE) -> str:
    if not specialty:
        return "unknown"
    pcs = {s.strip().lower() for s in primary_care}
    return "PC" if specialty.strip().lower() in pcs else "SC"


def load_physicians(path, primary_care=DEFAULT_PRIMARY_CARE, study_end_year: int = 2017):
    """Read a physicians CSV into ``(profiles, census)``.

    ``profiles`` is a list sorted by physician id; ``census`` counts roles.
    """
    reader = _data_lines(path)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != PHYSICIAN_COLUMNS:
        raise IngestError(f"malformed physicians header: {header!r}")
    profiles = {}
    for n, row in enumerate(reader, start=1):
        if len(row) != len(PHYSICIAN_COLUMNS):
            raise IngestError(f"physicians row {n}: expected {len(PHYSICIAN_COLUMNS)} fields")
        pid, gender, birth, specialty, school, residency, hospitals = (c.strip() for c in row)
        if not pid:
            raise IngestError(f"physicians row {n}: empty physician_id")
        if pid in profiles:
            raise IngestError(f"duplicate physician_id {pid!r} (row {n})")
        gender = gender.upper() if gender.upper() in GENDER_CODE else "unknown"
        try:
            year = int(birth)
        except ValueError:
            year = None
        if year is not None and not 1900 <= year <= study_end_year:
            year = None
        profiles[pid] = PhysicianProfile(
            physician_id=pid,
            gender=gender,
            birth_year=year,
            role=classify_role(specialty, primary_care),
            specialty=specialty or None,
            school=school or None,
            residency_institution=residency or None,
            hospital_ids=frozenset(h.strip() for h in hospitals.split(";") if h.strip()),
        )
    ordered = [profiles[k] for k in sorted(profiles)]
    return ordered, role_census(ordered)


def role_census(profiles) -> dict[str, int]:
    census = {"PC": 0, "SC": 0, "unknown": 0}
    for p in profiles:
        census[p.role] += 1
    return census


def physician_frame(profiles, study_end_year: int = 2017) -> pd.DataFrame:
    """Per-physician numeric table: age (median-imputed within role), gender code."""
    rows = []
    for p in profiles:
        rows.append({
            "physician_id": p.physician_id,
            "role": p.role,
            "gender": p.gender,
            "gender_code": GENDER_CODE.get(p.gender, np.nan),
            "birth_year": p.birth_year if p.birth_year is not None else np.nan,
            "age": (study_end_year - p.birth_year) if p.birth_year is not None else np.nan,
            "specialty": p.specialty or "",
            "school": p.school or "",
            "hospital": min(p.hospital_ids) if p.hospital_ids else "",
        })
    frame = pd.DataFrame(rows, columns=[
        "physician_id", "role", "gender", "gender_code", "birth_year", "age",
        "specialty", "school", "hospital",
    ])
    frame["age_imputed"] = frame["age"].isna().astype(int)
    medians = frame.groupby("role")["age"].median()
    overall = frame["age"].median()
    fill = frame["role"].map(medians).fillna(overall)
    frame["age"] = frame["age"].fillna(fill)
    return frame.set_index("physician_id", drop=False)


def write_consultations(table: pd.DataFrame, path, header_comment: str | None = None) -> None:
    out = table.copy()
    out["date"] = pd.to_datetime(out["date"]).dt.strftime("%Y-%m-%d")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        out[CONSULTATION_COLUMNS].to_csv(fh, index=False, lineterminator="\n")


def write_physicians(profiles, path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PHYSICIAN_COLUMNS)
        for p in sorted(profiles, key=lambda p: p.physician_id):
            w.writerow([
                p.physician_id,
                p.gender if p.gender in GENDER_CODE else "",
                "" if p.birth_year is None else p.birth_year,
                p.specialty or "",
                p.school or "",
                p.residency_institution or "",
                ";".join(sorted(p.hospital_ids)),
            ])
