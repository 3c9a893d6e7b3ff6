"""Weekly self-report cohorts: ingestion, cleaning, episode labels, windows.

CSV schema (UTF-8, header required)::

    patient_id,date,qids,asrm[,diagnosis]

``date`` is ``YYYY-MM-DD``; an empty score field is a missing response.
``diagnosis`` is optional and takes ``BP-I``, ``BP-II`` or ``unknown``.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import warnings
from dataclasses import dataclass
from datetime import date
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

STUDY_START = date(2012, 1, 1)
STUDY_END = date(2016, 12, 31)
DIAGNOSES = ("BP-I", "BP-II", "unknown")


class Scale(str, Enum):
    DEPRESSION = "depression"
    MANIA = "mania"

    @property
    def column(self) -> str:
        return "qids" if self is Scale.DEPRESSION else "asrm"

    @property
    def score_range(self) -> tuple[int, int]:
        return (0, 27) if self is Scale.DEPRESSION else (0, 20)


@dataclass(frozen=True)
class EpisodeRule:
    """A week is in-episode when it belongs to a run of at least
    ``min_duration`` consecutive responses scoring ``>= threshold``."""

    threshold: int
    min_duration: int

    def __post_init__(self):
        if self.min_duration < 1:
            raise ValueError("min_duration must be at least 1")


DEFAULT_RULES = {
    Scale.DEPRESSION: EpisodeRule(threshold=11, min_duration=2),
    Scale.MANIA: EpisodeRule(threshold=6, min_duration=1),
}


class IngestError(ValueError):
    """Malformed input; the message carries the offending line number."""


@dataclass(frozen=True)
class WeeklyObservation:
    week_index: int
    qids: int | None = None
    asrm: int | None = None

    def __post_init__(self):
        if self.week_index < 0:
            raise ValueError("week_index must be non-negative")
        for scale in Scale:
            v = getattr(self, scale.column)
            lo, hi = scale.score_range
            if v is not None and not lo <= v <= hi:
                raise ValueError(f"{scale.column} score {v} out of range [{lo},{hi}]")

    def score(self, scale: Scale) -> int | None:
        return getattr(self, Scale(scale).column)


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    weeks: tuple[WeeklyObservation, ...]
    diagnosis: str = "unknown"

    def __post_init__(self):
        object.__setattr__(self, "weeks", tuple(self.weeks))
        idx = [w.week_index for w in self.weeks]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"patient {self.patient_id}: week indices must be strictly increasing")
        if self.diagnosis not in DIAGNOSES:
            raise ValueError(f"unknown diagnosis {self.diagnosis!r}")

    @property
    def n_weeks(self) -> int:
        """Length of the week range ``0..last recorded week``."""
        return self.weeks[-1].week_index + 1 if self.weeks else 0

    def series(self, scale: Scale) -> np.ndarray:
        """Dense weekly scores over ``0..n_weeks-1``; NaN where missing."""
        out = np.full(self.n_weeks, np.nan)
        for w in self.weeks:
            v = w.score(scale)
            if v is not None:
                out[w.week_index] = v
        return out


@dataclass(frozen=True)
class RawRow:
    line: int
    patient_id: str
    date: date
    qids: int | None
    asrm: int | None
    diagnosis: str | None = None


@dataclass(frozen=True, eq=False)
class EpisodeMask:
    scale: Scale
    flags: np.ndarray

    def __post_init__(self):
        f = np.array(self.flags, dtype=bool)
        f.setflags(write=False)
        object.__setattr__(self, "flags", f)

    @property
    def onsets(self) -> list[int]:
        """First week of each maximal in-episode run."""
        f = self.flags
        return [int(i) for i in np.flatnonzero(f & ~np.concatenate([[False], f[:-1]]))]


@dataclass(frozen=True)
class LabeledWindow:
    patient_id: str
    start_week: int
    k: int
    values: tuple[float | None, ...]
    label: bool

    @property
    def target_week(self) -> int:
        return self.start_week + self.k


# --------------------------------------------------------------------------
# ingestion


def _parse_score(text: str, scale: Scale, line: int) -> int | None:
    text = text.strip()
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise IngestError(f"line {line}: {scale.column} value {text!r} is not a number") from None
    if not value.is_integer():
        raise IngestError(f"line {line}: {scale.column} value {text!r} is not an integer score")
    lo, hi = scale.score_range
    if not lo <= value <= hi:
        raise IngestError(f"line {line}: {scale.column} score out of range [{lo},{hi}]: {text}")
    return int(value)


def read_rows(source) -> list[RawRow]:
    """Parse and validate every row of a cohort CSV (no filtering)."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_rows(fh)
    reader = csv.reader(source)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise IngestError("line 1: empty file, header required") from None
    required = ["patient_id", "date", "qids", "asrm"]
    missing = [c for c in required if c not in header]
    if missing:
        raise IngestError(f"line 1: header lacks column(s) {', '.join(missing)}")
    pos = {name: header.index(name) for name in header}
    rows = []
    for line, fields in enumerate(reader, start=2):
        if not fields or all(not f.strip() for f in fields):
            continue
        if len(fields) != len(header):
            raise IngestError(f"line {line}: expected {len(header)} fields, got {len(fields)}")
        pid = fields[pos["patient_id"]].strip()
        if not pid:
            raise IngestError(f"line {line}: empty patient_id")
        try:
            when = date.fromisoformat(fields[pos["date"]].strip())
        except ValueError:
            raise IngestError(f"line {line}: bad date {fields[pos['date']]!r}, expected YYYY-MM-DD") from None
        diagnosis = None
        if "diagnosis" in pos:
            diagnosis = fields[pos["diagnosis"]].strip() or None
            if diagnosis is not None and diagnosis not in DIAGNOSES:
                raise IngestError(f"line {line}: diagnosis {diagnosis!r} not in {DIAGNOSES}")
        rows.append(RawRow(
            line=line,
            patient_id=pid,
            date=when,
            qids=_parse_score(fields[pos["qids"]], Scale.DEPRESSION, line),
            asrm=_parse_score(fields[pos["asrm"]], Scale.MANIA, line),
            diagnosis=diagnosis,
        ))
    return rows


def dedupe_weekly(rows: Sequence[RawRow]) -> list[WeeklyObservation]:
    """Collapse one patient's rows to at most one observation per week.

    Weeks are counted from the patient's first date,
    ``floor((date - first_date) / 7 days)``. Identical rows are dropped;
    of several responses in the same week the first (by date, then by
    file order) is kept.
    """
    if not rows:
        return []
    ordered = sorted(rows, key=lambda r: (r.date, r.line))
    first = ordered[0].date
    seen = set()
    kept: dict[int, WeeklyObservation] = {}
    for r in ordered:
        key = (r.date, r.qids, r.asrm)
        if key in seen:
            continue
        seen.add(key)
        week = (r.date - first).days // 7
        if week not in kept:
            kept[week] = WeeklyObservation(week, r.qids, r.asrm)
    return [kept[w] for w in sorted(kept)]


def build_cohort(rows: Iterable[RawRow], date_start: date | None = STUDY_START,
                 date_end: date | None = STUDY_END) -> list[PatientRecord]:
    by_patient: dict[str, list[RawRow]] = {}
    dropped = 0
    for r in rows:
        if (date_start is not None and r.date < date_start) or (date_end is not None and r.date > date_end):
            dropped += 1
            continue
        by_patient.setdefault(r.patient_id, []).append(r)
    if dropped:
        logger.info("dropped %d row(s) outside the date window", dropped)
    cohort = []
    for pid, prow in by_patient.items():
        diagnosis = next((r.diagnosis for r in prow if r.diagnosis), "unknown")
        cohort.append(PatientRecord(pid, tuple(dedupe_weekly(prow)), diagnosis))
    return cohort


def ingest_csv(source, date_start: date | None = STUDY_START,
               date_end: date | None = STUDY_END) -> list[PatientRecord]:
    """Read a cohort CSV into one :class:`PatientRecord` per patient.

    Rows dated outside ``[date_start, date_end]`` are dropped (pass
    ``None`` to disable either bound). Patients keep first-appearance order.
    """
    return build_cohort(read_rows(source), date_start, date_end)


# --------------------------------------------------------------------------
# episodes and eligibility


def label_episodes(record: PatientRecord, scale: Scale, rule: EpisodeRule | None = None) -> EpisodeMask:
    scale = Scale(scale)
    rule = rule or DEFAULT_RULES[scale]
    x = record.series(scale)
    hit = ~np.isnan(x) & (np.nan_to_num(x, nan=-1.0) >= rule.threshold)
    flags = np.zeros(len(x), dtype=bool)
    start = None
    for i, h in enumerate(np.append(hit, False)):
        if h and start is None:
            start = i
        elif not h and start is not None:
            if i - start >= rule.min_duration:
                flags[start:i] = True
            start = None
    return EpisodeMask(scale, flags)


def response_span(record: PatientRecord, scale: Scale) -> int:
    """Weeks from the first to the last actual response, inclusive."""
    present = np.flatnonzero(~np.isnan(record.series(scale)))
    return int(present[-1] - present[0] + 1) if present.size else 0


def adherence(record: PatientRecord, scale: Scale | None = None) -> float:
    """Fraction of weeks with a response between the first and last responses.

    With ``scale=None`` a week counts as responded if either questionnaire
    was answered.
    """
    if scale is None:
        present = ~np.isnan(record.series(Scale.DEPRESSION)) | ~np.isnan(record.series(Scale.MANIA))
    else:
        present = ~np.isnan(record.series(scale))
    idx = np.flatnonzero(present)
    if idx.size == 0:
        return math.nan
    return float(present[idx[0]:idx[-1] + 1].mean())


def eligible_patients(cohort: Sequence[PatientRecord], scale: Scale, rule: EpisodeRule | None = None,
                      masks: dict[str, EpisodeMask] | None = None, min_span: int = 5) -> list[PatientRecord]:
    """Patients monitored for at least ``min_span`` weeks with at least one episode."""
    scale = Scale(scale)
    kept = []
    for rec in cohort:
        mask = masks[rec.patient_id] if masks is not None else label_episodes(rec, scale, rule)
        if response_span(rec, scale) >= min_span and mask.flags.any():
            kept.append(rec)
    if not kept:
        warnings.warn(f"no patient is eligible for the {scale.value} scale", RuntimeWarning, stacklevel=2)
    return kept


# --------------------------------------------------------------------------
# windows


def _window_starts(x: np.ndarray, k: int) -> np.ndarray:
    n = len(x)
    if n <= k:
        return np.zeros(0, dtype=int)
    present = ~np.isnan(x)
    counts = np.convolve(present.astype(int), np.ones(k, dtype=int), mode="valid")[: n - k]
    starts = np.arange(n - k)
    return starts[present[starts + k] & (counts >= 2)]


def extract_windows(record: PatientRecord, mask: EpisodeMask, k: int) -> list[LabeledWindow]:
    """Labelled ``k``-week windows for one patient, stride one week.

    A window is kept when the week after it has a response and the window
    itself holds at least two responses; its label is the episode flag of
    that following week.
    """
    if k < 2:
        raise ValueError(f"window length must be at least 2, got {k}")
    x = record.series(mask.scale)
    if len(mask.flags) != len(x):
        raise ValueError("episode mask does not match the patient's week range")
    out = []
    for s in _window_starts(x, k):
        vals = tuple(None if math.isnan(v) else float(v) for v in x[s:s + k])
        out.append(LabeledWindow(record.patient_id, int(s), k, vals, bool(mask.flags[s + k])))
    return out


@dataclass(frozen=True, eq=False)
class WindowTable:
    """Column-oriented windows of one length across many patients."""

    k: int
    patient_ids: tuple[str, ...]       # one entry per patient in the table
    patient: np.ndarray                # (B,) index into patient_ids
    start_week: np.ndarray             # (B,)
    values: np.ndarray                 # (B, k), NaN = missing
    labels: np.ndarray                 # (B,) bool

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, rows: np.ndarray) -> "WindowTable":
        return WindowTable(self.k, self.patient_ids, self.patient[rows], self.start_week[rows],
                           self.values[rows], self.labels[rows])


def build_window_table(records: Sequence[PatientRecord], masks: dict[str, EpisodeMask], k: int) -> WindowTable:
    """Same windows as :func:`extract_windows`, stacked for batch featurization."""
    if k < 2:
        raise ValueError(f"window length must be at least 2, got {k}")
    pat, start, vals, labels = [], [], [], []
    for i, rec in enumerate(records):
        mask = masks[rec.patient_id]
        x = rec.series(mask.scale)
        s = _window_starts(x, k)
        if s.size == 0:
            continue
        pat.append(np.full(s.size, i))
        start.append(s)
        vals.append(x[s[:, None] + np.arange(k)])
        labels.append(mask.flags[s + k])
    if not pat:
        return WindowTable(k, tuple(r.patient_id for r in records), np.zeros(0, int), np.zeros(0, int),
                           np.zeros((0, k)), np.zeros(0, bool))
    return WindowTable(k, tuple(r.patient_id for r in records), np.concatenate(pat), np.concatenate(start),
                       np.concatenate(vals), np.concatenate(labels))
