"""Confusion-matrix metrics and the rank-based AUC."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    pass


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC is undefined when only one class is present")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


@dataclass(frozen=True)
class MetricsReport:
    """Metrics of one evaluation; ``None`` marks an undefined value."""

    sensitivity: float | None
    specificity: float | None
    accuracy: float
    ppv: float | None
    auc: float | None
    tp: int
    fp: int
    tn: int
    fn: int
    k: int | None = None
    model: str | None = None
    seed: int | None = None

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


METRIC_NAMES = ("sensitivity", "specificity", "accuracy", "ppv", "auc")


def compute_metrics(scores, labels, threshold: float = 0.5, *, k: int | None = None,
                    model: str | None = None, seed: int | None = None) -> MetricsReport:
    """Threshold metrics at ``score >= threshold`` plus AUC.

    With a single class present the AUC (and any metric whose denominator
    is zero) is reported as ``None``; use :func:`auc` directly to get the
    error instead.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.size == 0:
        raise ValueError("cannot compute metrics on an empty set")
    pred = scores >= threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    tn = int(np.sum(~pred & ~labels))
    fn = int(np.sum(~pred & labels))
    try:
        area = auc(scores, labels)
    except UndefinedMetricError:
        area = None
    return MetricsReport(
        sensitivity=_ratio(tp, tp + fn),
        specificity=_ratio(tn, tn + fp),
        accuracy=(tp + tn) / scores.size,
        ppv=_ratio(tp, tp + fp),
        auc=area,
        tp=tp, fp=fp, tn=tn, fn=fn,
        k=k, model=model, seed=seed,
    )
