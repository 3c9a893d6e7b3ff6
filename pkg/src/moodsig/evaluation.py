"""Repeated patient-split evaluation, model comparison and the transition experiment."""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .cohort import (
    EpisodeMask,
    EpisodeRule,
    PatientRecord,
    Scale,
    WindowTable,
    build_window_table,
    eligible_patients,
    label_episodes,
)
from .elasticnet import ALPHA_GRID, LAMBDA_GRID, ConvergenceError, CVResult, FittedModel, cv_select, fit_model
from .features import MODEL_KINDS, featurize, signature_features
from .metrics import MetricsReport, compute_metrics

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvaluationConfig:
    lambda_grid: tuple[float, ...] = LAMBDA_GRID
    alpha_grid: tuple[float, ...] = ALPHA_GRID
    folds: int = 10
    test_fraction: float = 1.0 / 3.0
    depth: int = 2
    threshold: float = 0.5
    tol: float = 1e-6
    max_iter: int = 100
    workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if self.folds < 2:
            raise ValueError("need at least 2 CV folds")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


# --------------------------------------------------------------------------
# patient splits


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    train_patient_ids: tuple[str, ...]
    test_patient_ids: tuple[str, ...]
    cohort_ratio: float
    train_ratio: float
    test_ratio: float

    @property
    def ratio_deviation(self) -> float:
        """Largest relative deviation of either side's ratio from the cohort's."""
        return max(abs(self.train_ratio - self.cohort_ratio), abs(self.test_ratio - self.cohort_ratio)) \
            / self.cohort_ratio


def episode_week_counts(records: Sequence[PatientRecord], masks: dict[str, EpisodeMask]) -> np.ndarray:
    """(episode weeks, answered weeks) per patient on the masks' scale."""
    out = np.zeros((len(records), 2), dtype=np.int64)
    for i, rec in enumerate(records):
        mask = masks[rec.patient_id]
        answered = ~np.isnan(rec.series(mask.scale))
        out[i] = int(mask.flags.sum()), int(answered.sum())
    return out


def _ratio(counts: np.ndarray) -> float:
    episode, answered = counts.sum(axis=0)
    rest = answered - episode
    return float(episode / rest) if rest else math.inf


def stratified_patient_split(records: Sequence[PatientRecord], masks: dict[str, EpisodeMask],
                             test_fraction: float = 1.0 / 3.0, seed: int = 0) -> SplitPlan:
    """Random patient split preserving the episode-week ratio on both sides.

    Patients are ordered by their share of episode weeks (ties broken by a
    seeded shuffle) and cut into ``round(test_fraction * N)`` consecutive
    blocks of near-equal size; one patient drawn at random from each block
    goes to the test side.
    """
    n = len(records)
    if n < 2:
        raise ValueError(f"need at least 2 patients to split, got {n}")
    counts = episode_week_counts(records, masks)
    episode, answered = counts.sum(axis=0)
    if episode == 0 or episode == answered:
        raise ValueError("cannot stratify: cohort has no episode weeks or only episode weeks")
    n_test = min(n - 1, max(1, int(round(test_fraction * n))))
    rng = np.random.default_rng(seed)
    share = counts[:, 0] / np.maximum(counts[:, 1], 1)
    order = rng.permutation(n)
    order = order[np.argsort(share[order], kind="stable")]
    edges = np.linspace(0, n, n_test + 1).round().astype(int)
    test = np.zeros(n, dtype=bool)
    for lo, hi in zip(edges[:-1], edges[1:]):
        test[order[lo + int(rng.integers(hi - lo))]] = True
    ids = [r.patient_id for r in records]
    plan = SplitPlan(
        seed=int(seed),
        train_patient_ids=tuple(i for i, t in zip(ids, test) if not t),
        test_patient_ids=tuple(i for i, t in zip(ids, test) if t),
        cohort_ratio=_ratio(counts),
        train_ratio=_ratio(counts[~test]),
        test_ratio=_ratio(counts[test]),
    )
    _assert_disjoint(plan, set(ids))
    return plan


def _assert_disjoint(plan: SplitPlan, cohort_ids: set[str]) -> None:
    train, test = set(plan.train_patient_ids), set(plan.test_patient_ids)
    if train & test:
        raise AssertionError(f"patients on both sides of split {plan.seed}: {sorted(train & test)}")
    if train | test != cohort_ids:
        raise AssertionError(f"split {plan.seed} does not cover the cohort")


# --------------------------------------------------------------------------
# fitting with leakage guards


@dataclass(frozen=True, eq=False)
class FitOutcome:
    model: FittedModel
    cv: CVResult
    test_scores: np.ndarray


def fit_and_score(X: np.ndarray, y: np.ndarray, groups: np.ndarray, train: np.ndarray, test: np.ndarray,
                  config: EvaluationConfig, seed: int) -> FitOutcome:
    """Select hyperparameters by grouped CV on ``train``, refit there, score ``test``.

    Only ``X[train]`` and ``y[train]`` ever reach the standardizer and the
    CV search; this is asserted, not assumed.
    """
    train = np.asarray(train)
    test = np.asarray(test)
    if np.intersect1d(train, test).size:
        raise AssertionError("train and test rows overlap")
    if set(groups[train]) & set(groups[test]):
        raise AssertionError("a patient contributes windows to both train and test")
    X_tr, y_tr = X[train], y[train]
    cv = cv_select(X_tr, y_tr, groups[train], config.lambda_grid, config.alpha_grid,
                   folds=config.folds, seed=seed, tol=config.tol, max_iter=config.max_iter)
    model = fit_model(X_tr, y_tr, cv.mix, cv.alpha, tol=config.tol, max_iter=config.max_iter)
    if model.standardizer.n_rows != len(train):
        raise AssertionError("standardizer was fitted on rows outside the training set")
    return FitOutcome(model, cv, model.predict_proba(X[test]))


# --------------------------------------------------------------------------
# repeated evaluation


@dataclass(frozen=True)
class RepetitionOutcome:
    model: str
    k: int
    seed: int
    report: MetricsReport | None
    skipped: str | None
    n_train: int
    n_test: int
    mix: float | None = None
    alpha: float | None = None

    @property
    def completed(self) -> bool:
        return self.report is not None


@dataclass(frozen=True, eq=False)
class WindowData:
    """Windows and features of one (scale, k), shared by every repetition."""

    scale: Scale
    k: int
    records: tuple[PatientRecord, ...]
    masks: dict
    table: WindowTable
    features: dict          # model kind -> (B, p) matrix
    groups: np.ndarray      # patient id per window


def eligible_with_masks(records: Sequence[PatientRecord], scale: Scale,
                        rule: EpisodeRule | None = None) -> tuple[list[PatientRecord], dict]:
    """Eligible patients on ``scale`` and their episode masks."""
    scale = Scale(scale)
    masks = {r.patient_id: label_episodes(r, scale, rule) for r in records}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        kept = eligible_patients(records, scale, masks=masks)
    if not kept:
        raise ValueError(f"no eligible patients for the {scale.value} scale "
                         "(need a response span of 5+ weeks and at least one episode)")
    return kept, {r.patient_id: masks[r.patient_id] for r in kept}


def prepare_windows(records: Sequence[PatientRecord], scale: Scale, k: int,
                    model_kinds: Sequence[str] = MODEL_KINDS, depth: int = 2,
                    rule: EpisodeRule | None = None) -> WindowData:
    kept, masks = eligible_with_masks(records, scale, rule)
    table = build_window_table(kept, masks, k)
    if len(table) == 0:
        raise ValueError(f"no windows of length {k} in the eligible cohort")
    feats = {kind: featurize(table.values, kind, depth) for kind in model_kinds}
    groups = np.asarray(table.patient_ids, dtype=object)[table.patient]
    return WindowData(Scale(scale), k, tuple(kept), masks, table, feats, groups)


def _run_repetition(data: WindowData, seed: int, model_kinds: Sequence[str],
                    config: EvaluationConfig) -> tuple[SplitPlan, list[RepetitionOutcome]]:
    plan = stratified_patient_split(data.records, data.masks, config.test_fraction, seed)
    test_ids = set(plan.test_patient_ids)
    is_test = np.array([g in test_ids for g in data.groups])
    train, test = np.flatnonzero(~is_test), np.flatnonzero(is_test)
    y = data.table.labels.astype(int)
    common = dict(k=data.k, seed=seed, n_train=len(train), n_test=len(test))
    reason = None
    if len(test) == 0 or y[test].min() == y[test].max():
        reason = "test set has a single class"
    elif y[train].min() == y[train].max():
        reason = "training set has a single class"
    outcomes = []
    for kind in model_kinds:
        if reason:
            outcomes.append(RepetitionOutcome(kind, report=None, skipped=reason, **common))
            continue
        try:
            fit = fit_and_score(data.features[kind], y, data.groups, train, test, config, seed)
        except (ValueError, ConvergenceError) as exc:
            outcomes.append(RepetitionOutcome(kind, report=None, skipped=f"fit failed: {exc}", **common))
            continue
        report = compute_metrics(fit.test_scores, y[test], config.threshold, k=data.k, model=kind, seed=seed)
        outcomes.append(RepetitionOutcome(kind, report=report, skipped=None, mix=fit.cv.mix,
                                          alpha=fit.cv.alpha, **common))
    return plan, outcomes


_WORKER_DATA: WindowData | None = None


def _init_worker(data: WindowData) -> None:
    global _WORKER_DATA
    _WORKER_DATA = data


def _worker_job(seed: int, model_kinds, config):
    return _run_repetition(_WORKER_DATA, seed, model_kinds, config)


@dataclass(frozen=True, eq=False)
class EvaluationResult:
    scale: Scale
    k: int
    plans: tuple[SplitPlan, ...]
    outcomes: dict = field(repr=False)     # model kind -> tuple of RepetitionOutcome, ordered by seed

    @property
    def models(self) -> tuple[str, ...]:
        return tuple(self.outcomes)

    def reports(self, model: str) -> list[MetricsReport]:
        return [o.report for o in self.outcomes[model] if o.completed]

    def skipped(self) -> list[RepetitionOutcome]:
        return [o for outs in self.outcomes.values() for o in outs if not o.completed]

    def metric_values(self, model: str, metric: str) -> np.ndarray:
        """Per-repetition values of ``metric``; NaN where skipped or undefined."""
        vals = []
        for o in self.outcomes[model]:
            v = getattr(o.report, metric) if o.completed else None
            vals.append(np.nan if v is None else v)
        return np.array(vals, dtype=np.float64)

    def summary(self, model: str, metric: str) -> tuple[float, float, int]:
        """Mean, SD (ddof=1) and count over completed repetitions."""
        v = self.metric_values(model, metric)
        v = v[~np.isnan(v)]
        if v.size == 0:
            return math.nan, math.nan, 0
        return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0, int(v.size)

    def compare(self, model_a: str, model_b: str, metric: str) -> "ComparisonResult":
        a = self.metric_values(model_a, metric)
        b = self.metric_values(model_b, metric)
        sizes = {o.seed: (o.n_train, o.n_test) for o in self.outcomes[model_a]}
        keep = ~(np.isnan(a) | np.isnan(b))
        seeds = [o.seed for o in self.outcomes[model_a]]
        n_tr = [sizes[s][0] for s, kk in zip(seeds, keep) if kk]
        n_te = [sizes[s][1] for s, kk in zip(seeds, keep) if kk]
        return corrected_paired_ttest(a[keep], b[keep], n_tr, n_te, metric=metric, models=(model_a, model_b))


def repeated_evaluation(records: Sequence[PatientRecord] | WindowData, scale: Scale | None = None,
                        model_kinds: Sequence[str] | None = None, k: int | None = None,
                        repetitions: int = 100, base_seed: int = 0,
                        config: EvaluationConfig | None = None) -> EvaluationResult:
    """Evaluate each model kind on ``repetitions`` patient splits.

    Repetition ``r`` uses split seed ``base_seed + r`` for every model, so
    all models see identical train and test windows and the series can be
    compared pairwise. Pass a :class:`WindowData` to reuse features across
    calls; ``model_kinds`` then defaults to the kinds it holds, otherwise
    to all five.
    """
    config = config or EvaluationConfig()
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    if model_kinds is None:
        model_kinds = tuple(records.features) if isinstance(records, WindowData) else MODEL_KINDS
    model_kinds = tuple(model_kinds)
    unknown = set(model_kinds) - set(MODEL_KINDS)
    if unknown:
        raise ValueError(f"unknown model kinds {sorted(unknown)}; choose from {MODEL_KINDS}")
    if isinstance(records, WindowData):
        data = records
        missing = set(model_kinds) - set(data.features)
        if missing:
            raise ValueError(f"window data lacks features for {sorted(missing)}")
    else:
        if scale is None or k is None:
            raise ValueError("scale and k are required when passing patient records")
        data = prepare_windows(records, scale, k, model_kinds, config.depth)
    seeds = [base_seed + r for r in range(repetitions)]
    if config.workers > 1 and repetitions > 1:
        with ProcessPoolExecutor(max_workers=config.workers, initializer=_init_worker, initargs=(data,)) as pool:
            results = list(pool.map(_worker_job, seeds, [model_kinds] * len(seeds), [config] * len(seeds)))
    else:
        results = [_run_repetition(data, s, model_kinds, config) for s in seeds]
    plans = tuple(p for p, _ in results)
    outcomes = {kind: tuple(outs[i] for _, outs in results) for i, kind in enumerate(model_kinds)}
    for plan in plans:
        _assert_disjoint(plan, {r.patient_id for r in data.records})
    n_skip = sum(not o.completed for outs in outcomes.values() for o in outs)
    if n_skip:
        logger.warning("%s k=%d: %d model repetition(s) skipped", data.scale.value, data.k, n_skip)
    return EvaluationResult(data.scale, data.k, plans, outcomes)


# --------------------------------------------------------------------------
# corrected paired t-test


@dataclass(frozen=True)
class ComparisonResult:
    model_a: str
    model_b: str
    metric: str
    mean_difference: float
    t_statistic: float
    p_value: float
    repetitions: int
    degenerate: bool = False


def corrected_paired_ttest(a, b, n_train, n_test, metric: str = "", models: tuple[str, str] = ("a", "b")
                           ) -> ComparisonResult:
    """Resampled paired t-test with the Nadeau-Bengio variance correction.

    ``t = mean(d) / sqrt((1/K + n_test/n_train) * var(d))`` with
    ``d = a - b`` and the unbiased variance; the p-value is two-sided on
    ``K - 1`` degrees of freedom. ``n_train`` and ``n_test`` may be
    per-repetition sequences, in which case their means set the ratio.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired series must be 1-D and of equal length")
    K = a.size
    if K < 2:
        raise ValueError(f"need at least 2 paired repetitions, got {K}")
    ratio = float(np.mean(n_test)) / float(np.mean(n_train))
    d = a - b
    mean = float(d.mean())
    var = float(d.var(ddof=1))
    if var <= 1e-300 or np.all(d == d[0]):
        if mean == 0.0:
            return ComparisonResult(*models, metric, 0.0, 0.0, 1.0, K)
        return ComparisonResult(*models, metric, mean, math.copysign(math.inf, mean), 0.0, K, degenerate=True)
    t = mean / math.sqrt((1.0 / K + ratio) * var)
    p = float(2.0 * stats.t.sf(abs(t), df=K - 1))
    return ComparisonResult(*models, metric, mean, float(t), min(1.0, p), K)


# --------------------------------------------------------------------------
# transition experiment


TRANSITION_GRID = (0, 1, 2, 3, 4, 6)


@dataclass(frozen=True, eq=False)
class TransitionSamples:
    n: int
    values: np.ndarray          # (S, interval_len), NaN = missing
    labels: np.ndarray          # 1 = precursor, 0 = wellness
    groups: np.ndarray          # patient id per sample
    onsets: int                 # onsets used
    skips: dict                 # reason -> count


def transition_samples(records: Sequence[PatientRecord], masks: dict, n: int, interval_len: int = 6,
                       wellness_offset: int = 14) -> TransitionSamples:
    """Precursor ``[e-n-L, e-n)`` and wellness ``[e-w-L, e-w)`` intervals per onset ``e``.

    An onset is skipped (and counted by reason) when either interval leaves
    the patient's response range or has fewer than two answered weeks.
    """
    if n < 0 or interval_len < 2 or wellness_offset < 0:
        raise ValueError("need n >= 0, interval_len >= 2 and wellness_offset >= 0")
    pre = (-n - interval_len, -n)
    well = (-wellness_offset - interval_len, -wellness_offset)
    if pre[0] < well[1] and well[0] < pre[1]:
        raise ValueError(f"precursor interval {pre} overlaps wellness interval {well} for n={n}")
    vals, labels, groups = [], [], []
    skips: dict[str, int] = {}
    used = 0
    for rec in records:
        mask = masks[rec.patient_id]
        x = rec.series(mask.scale)
        present = np.flatnonzero(~np.isnan(x))
        first, last = int(present[0]), int(present[-1])
        for e in mask.onsets:
            lo = e + min(pre[0], well[0])
            if lo < first or e + max(pre[1], well[1]) > last + 1:
                skips["interval outside the response range"] = skips.get("interval outside the response range", 0) + 1
                continue
            p_int = x[e + pre[0]:e + pre[1]]
            w_int = x[e + well[0]:e + well[1]]
            if min(np.sum(~np.isnan(p_int)), np.sum(~np.isnan(w_int))) < 2:
                skips["fewer than two answered weeks"] = skips.get("fewer than two answered weeks", 0) + 1
                continue
            used += 1
            vals += [p_int, w_int]
            labels += [1, 0]
            groups += [rec.patient_id, rec.patient_id]
    return TransitionSamples(n, np.array(vals).reshape(-1, interval_len), np.array(labels, dtype=int),
                             np.array(groups, dtype=object), used, skips)


@dataclass(frozen=True, eq=False)
class TransitionResult:
    scale: Scale
    n: int
    aucs: np.ndarray
    onsets: int
    skips: dict
    skipped_repetitions: dict

    @property
    def mean(self) -> float:
        return float(np.mean(self.aucs)) if self.aucs.size else math.nan

    @property
    def sd(self) -> float:
        return float(np.std(self.aucs, ddof=1)) if self.aucs.size > 1 else math.nan


def transition_experiment(records: Sequence[PatientRecord], scale: Scale, n_grid: Sequence[int] = TRANSITION_GRID,
                          interval_len: int = 6, wellness_offset: int = 14, repetitions: int = 100,
                          base_seed: int = 0, config: EvaluationConfig | None = None,
                          rule: EpisodeRule | None = None) -> list[TransitionResult]:
    """Signature-model AUC separating precursor from wellness intervals, per ``n``.

    Repetition ``r`` uses the patient split with seed ``base_seed + r``,
    the same split for every ``n``.
    """
    config = config or EvaluationConfig()
    kept, masks = eligible_with_masks(records, scale, rule)
    results = []
    for n in n_grid:
        samples = transition_samples(kept, masks, n, interval_len, wellness_offset)
        if samples.onsets == 0:
            raise ValueError(f"no onset has both intervals available for n={n}")
        X = signature_features(samples.values, config.depth)
        aucs = []
        skipped: dict[str, int] = {}
        for r in range(repetitions):
            seed = base_seed + r
            plan = stratified_patient_split(kept, masks, config.test_fraction, seed)
            test_ids = set(plan.test_patient_ids)
            is_test = np.array([g in test_ids for g in samples.groups], dtype=bool)
            train, test = np.flatnonzero(~is_test), np.flatnonzero(is_test)
            if len(test) == 0 or len(train) == 0:
                skipped["empty side"] = skipped.get("empty side", 0) + 1
                continue
            try:
                fit = fit_and_score(X, samples.labels, samples.groups, train, test, config, seed)
            except (ValueError, ConvergenceError) as exc:
                skipped[str(exc)] = skipped.get(str(exc), 0) + 1
                continue
            aucs.append(compute_metrics(fit.test_scores, samples.labels[test], config.threshold).auc)
        results.append(TransitionResult(Scale(scale), n, np.array(aucs), samples.onsets, samples.skips, skipped))
    return results
