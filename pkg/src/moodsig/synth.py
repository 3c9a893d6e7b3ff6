"""Deterministic synthetic cohorts of weekly QIDS/ASRM self-reports.

Each patient gets a latent AR(1) mood series around a patient-specific
baseline on both scales. Episode-prone patients receive episode blocks that
satisfy the labeling rules, each preceded by a linear precursor ramp.
Weekly non-response is Bernoulli, with a higher rate during the ramp.
Weeks inside an episode are always answered, and every non-episode week is
clipped below the episode threshold, so relabeling the output recovers the
planted onsets exactly.

Defaults target a cohort of 261 patients with about 59% depression-prone
and 69% mania-prone patients and an adherence of about 0.6. All other
parameter values are invented.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable

import numpy as np

from .cohort import (
    DEFAULT_RULES,
    PatientRecord,
    Scale,
    WeeklyObservation,
    eligible_patients,
    label_episodes,
)

FIRST_MONDAY = date(2012, 1, 2)
CALENDAR_WEEKS = 260   # Mondays from 2012-01-02 through 2016-12-19

CSV_HEADER = ("patient_id", "date", "qids", "asrm", "diagnosis")


@dataclass(frozen=True)
class ScaleProcess:
    """Latent process and episode model for one instrument.

    Episodes start from a renewal process: after the previous episode ends
    (or at the record start), the gap to the next onset is ``min_gap`` plus
    a geometric number of weeks with mean ``mean_gap``.
    """

    prone_fraction: float
    baseline_low: float
    baseline_high: float
    noise_sd: float
    ar: float
    mean_gap: float
    min_gap: int
    duration_min: int
    duration_mean: float
    episode_low: int
    episode_high: int
    ramp_length: int
    ramp_slope: float

    def validate(self, name: str, scale: Scale) -> None:
        lo, hi = scale.score_range
        threshold = DEFAULT_RULES[scale].threshold
        checks = [
            (0.0 <= self.prone_fraction <= 1.0, "prone_fraction must be in [0, 1]"),
            (lo <= self.baseline_low <= self.baseline_high <= hi, "baseline range must lie in the score range"),
            (self.noise_sd >= 0, "noise_sd must be non-negative"),
            (-1.0 < self.ar < 1.0, "ar must be in (-1, 1)"),
            (self.mean_gap >= 0 and self.min_gap >= 0, "gaps must be non-negative"),
            (self.duration_min >= DEFAULT_RULES[scale].min_duration,
             "duration_min must satisfy the episode rule"),
            (self.duration_mean >= self.duration_min, "duration_mean must be at least duration_min"),
            (threshold <= self.episode_low <= self.episode_high <= hi,
             "episode scores must meet the threshold and lie in range"),
            (self.ramp_length >= 0, "ramp_length must be non-negative"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(f"{name}: {msg}")


@dataclass(frozen=True)
class GeneratorConfig:
    n_patients: int = 261
    weeks_min: int = 240
    weeks_max: int = 260
    seed: int = 7
    depression: ScaleProcess = field(default_factory=lambda: ScaleProcess(
        prone_fraction=0.59, baseline_low=1.0, baseline_high=9.0, noise_sd=1.2, ar=0.5,
        mean_gap=30.0, min_gap=24, duration_min=2, duration_mean=3.0,
        episode_low=11, episode_high=17, ramp_length=4, ramp_slope=2.0))
    mania: ScaleProcess = field(default_factory=lambda: ScaleProcess(
        prone_fraction=0.69, baseline_low=0.0, baseline_high=3.0, noise_sd=0.8, ar=0.5,
        mean_gap=30.0, min_gap=24, duration_min=1, duration_mean=2.0,
        episode_low=6, episode_high=11, ramp_length=4, ramp_slope=1.0))
    missing_base: float = 0.38
    missing_ramp: float = 0.6
    duplicate_rate: float = 0.01
    bp1_fraction: float = 0.5

    def __post_init__(self):
        if self.n_patients < 1:
            raise ValueError(f"n_patients must be at least 1, got {self.n_patients}")
        if not 5 <= self.weeks_min <= self.weeks_max <= CALENDAR_WEEKS:
            raise ValueError(f"need 5 <= weeks_min <= weeks_max <= {CALENDAR_WEEKS}")
        for name in ("missing_base", "missing_ramp", "duplicate_rate", "bp1_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        self.depression.validate("depression", Scale.DEPRESSION)
        self.mania.validate("mania", Scale.MANIA)

    def process(self, scale: Scale) -> ScaleProcess:
        return self.depression if Scale(scale) is Scale.DEPRESSION else self.mania

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generator keys: {sorted(unknown)}")
        for name in ("depression", "mania"):
            if name in d and isinstance(d[name], dict):
                base = asdict(getattr(cls(), name))
                extra = set(d[name]) - set(base)
                if extra:
                    raise ValueError(f"unknown {name} keys: {sorted(extra)}")
                d[name] = ScaleProcess(**{**base, **d[name]})
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "GeneratorConfig":
        return cls.from_dict(json.loads(text))


def null_config(**overrides) -> GeneratorConfig:
    """A cohort with no planted signal on the mania scale.

    Every patient is mania-prone and mania weeks arrive as i.i.d.
    single-week episodes (geometric gaps, no minimum), there is no ramp,
    and missingness is uniform, so no window carries information about the
    week that follows it.
    """
    mania = ScaleProcess(
        prone_fraction=1.0, baseline_low=0.0, baseline_high=3.0, noise_sd=0.8, ar=0.5,
        mean_gap=6.0, min_gap=0, duration_min=1, duration_mean=1.0,
        episode_low=6, episode_high=11, ramp_length=0, ramp_slope=0.0)
    depression = replace(GeneratorConfig().depression, prone_fraction=0.0)
    base = GeneratorConfig(depression=depression, mania=mania, missing_ramp=0.38)
    return replace(base, **overrides)


@dataclass(frozen=True)
class SyntheticPatient:
    record: PatientRecord
    start: date
    onsets: dict            # Scale -> tuple of planted onset weeks
    rows: tuple             # CSV rows (patient_id, date, qids, asrm, diagnosis) as strings


@dataclass(frozen=True)
class SyntheticCohort:
    config: GeneratorConfig
    patients: tuple[SyntheticPatient, ...]

    @property
    def records(self) -> list[PatientRecord]:
        return [p.record for p in self.patients]

    def onsets(self, scale: Scale) -> dict[str, tuple[int, ...]]:
        return {p.record.patient_id: p.onsets[Scale(scale)] for p in self.patients}


def _geometric(rng: np.random.Generator, mean: float) -> int:
    # failures before the first success, mean ``mean``
    if mean <= 0:
        return 0
    return int(rng.geometric(1.0 / (1.0 + mean)) - 1)


def _plant_episodes(rng, proc: ScaleProcess, n_weeks: int, blocked: np.ndarray) -> list[tuple[int, int]]:
    """Non-overlapping (onset, duration) blocks avoiding ``blocked`` weeks and their ramps."""
    episodes = []
    t = 0
    while True:
        onset = t + (proc.min_gap if episodes else 0) + _geometric(rng, proc.mean_gap)
        duration = proc.duration_min + _geometric(rng, proc.duration_mean - proc.duration_min)
        if onset + duration > n_weeks:
            break
        lo = max(0, onset - proc.ramp_length - 1)
        if not blocked[lo:onset + duration + 1].any():
            episodes.append((onset, duration))
        t = onset + duration
    return episodes


def _latent(rng, proc: ScaleProcess, n_weeks: int) -> np.ndarray:
    mu = rng.uniform(proc.baseline_low, proc.baseline_high)
    eps = rng.normal(scale=proc.noise_sd, size=n_weeks)
    x = np.empty(n_weeks)
    dev = eps[0] / np.sqrt(max(1e-12, 1.0 - proc.ar ** 2))
    for t in range(n_weeks):
        if t:
            dev = proc.ar * dev + eps[t]
        x[t] = mu + dev
    return x


def _scores(rng, proc: ScaleProcess, scale: Scale, n_weeks: int, episodes, ramp_mask: np.ndarray):
    lo, hi = scale.score_range
    threshold = DEFAULT_RULES[scale].threshold
    x = _latent(rng, proc, n_weeks)
    in_episode = np.zeros(n_weeks, dtype=bool)
    for onset, duration in episodes:
        for j in range(proc.ramp_length):
            t = onset - proc.ramp_length + j
            if t >= 0:
                x[t] += proc.ramp_slope * (j + 1)
                ramp_mask[t] = True
        in_episode[onset:onset + duration] = True
    scores = np.clip(np.rint(x), lo, threshold - 1)
    n_ep = int(in_episode.sum())
    if n_ep:
        scores[in_episode] = rng.integers(proc.episode_low, proc.episode_high + 1, size=n_ep)
    return scores.astype(int), in_episode


def _patient(config: GeneratorConfig, index: int, seq: np.random.SeedSequence) -> SyntheticPatient:
    rng = np.random.default_rng(seq)
    pid = f"S{index + 1:04d}"
    n_weeks = int(rng.integers(config.weeks_min, config.weeks_max + 1))
    start = FIRST_MONDAY + timedelta(weeks=int(rng.integers(0, CALENDAR_WEEKS - n_weeks + 1)))
    diagnosis = "BP-I" if rng.random() < config.bp1_fraction else "BP-II"

    blocked = np.zeros(n_weeks, dtype=bool)
    ramp = np.zeros(n_weeks, dtype=bool)
    scores, onsets, episode_weeks = {}, {}, np.zeros(n_weeks, dtype=bool)
    for scale in (Scale.DEPRESSION, Scale.MANIA):
        proc = config.process(scale)
        episodes = []
        if rng.random() < proc.prone_fraction:
            episodes = _plant_episodes(rng, proc, n_weeks, blocked)
            if not episodes:
                # guarantee one episode for a prone patient
                duration = proc.duration_min
                free = [t for t in range(n_weeks - duration + 1)
                        if not blocked[max(0, t - proc.ramp_length - 1):t + duration + 1].any()]
                if free:
                    episodes = [(int(rng.choice(free)), duration)]
        for onset, duration in episodes:
            blocked[max(0, onset - proc.ramp_length):onset + duration] = True
        scores[scale], in_ep = _scores(rng, proc, scale, n_weeks, episodes, ramp)
        episode_weeks |= in_ep
        onsets[scale] = tuple(o for o, _ in episodes)

    p_miss = np.where(ramp, config.missing_ramp, config.missing_base)
    missing = (rng.random(n_weeks) < p_miss) & ~episode_weeks
    # the record starts and ends with an answered week
    missing[0] = missing[-1] = False
    dup = rng.random(n_weeks) < config.duplicate_rate
    dup_shift = rng.integers(0, 4, size=n_weeks)
    dup_other = rng.random(n_weeks) < 0.5

    weeks, rows = [], []
    for t in range(n_weeks):
        day = start + timedelta(weeks=t)
        if missing[t]:
            weeks.append(WeeklyObservation(t, None, None))
            rows.append((pid, day.isoformat(), "", "", diagnosis))
            continue
        q, a = int(scores[Scale.DEPRESSION][t]), int(scores[Scale.MANIA][t])
        weeks.append(WeeklyObservation(t, q, a))
        rows.append((pid, day.isoformat(), str(q), str(a), diagnosis))
        if dup[t]:
            # a repeated submission later the same week; ingestion keeps the first
            q2 = q if not dup_other[t] else int(np.clip(q + 1, 0, Scale.DEPRESSION.score_range[1]))
            rows.append((pid, (day + timedelta(days=int(dup_shift[t]))).isoformat(), str(q2), str(a), diagnosis))
    record = PatientRecord(pid, tuple(weeks), diagnosis)
    return SyntheticPatient(record, start, onsets, tuple(rows))


def generate(config: GeneratorConfig | None = None) -> SyntheticCohort:
    """Generate a cohort; raises ``ValueError`` if no patient is eligible."""
    config = config or GeneratorConfig()
    children = np.random.SeedSequence(config.seed).spawn(config.n_patients)
    patients = tuple(_patient(config, i, seq) for i, seq in enumerate(children))
    cohort = SyntheticCohort(config, patients)
    if not any(_count_eligible(cohort.records, s) for s in Scale):
        raise ValueError("generator config yields no eligible patients on either scale")
    return cohort


def _count_eligible(records: list[PatientRecord], scale: Scale) -> int:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return len(eligible_patients(records, scale))


def generate_cohort(config: GeneratorConfig | None = None) -> list[PatientRecord]:
    return generate(config).records


def csv_text(cohort: SyntheticCohort) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for p in cohort.patients:
        writer.writerows(p.rows)
    return buf.getvalue()


def write_csv(cohort: SyntheticCohort, path) -> Path:
    path = Path(path)
    path.write_text(csv_text(cohort), encoding="utf-8")
    return path


def episode_prone_fraction(records: Iterable[PatientRecord], scale: Scale) -> float:
    """Share of patients with at least one labeled episode on ``scale``."""
    records = list(records)
    hits = sum(bool(label_episodes(r, scale).flags.any()) for r in records)
    return hits / len(records) if records else 0.0
