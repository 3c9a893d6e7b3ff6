"""Window featurization for the signature model and the four baselines."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .cohort import LabeledWindow
from .signature import (
    augment_with_indicator,
    batch_augment_with_indicator,
    batch_lead_lag,
    batch_signature,
    feature_count,
    lead_lag,
    signature,
    words,
)

MODEL_KINDS = ("Sig", "MRM", "Mean", "Rmssd", "MissRes")
BASELINE_KINDS = ("Mean", "Rmssd", "MissRes", "MRM")
FEATURE_SCHEMA_VERSION = 1


def _values(window) -> np.ndarray:
    vals = window.values if isinstance(window, LabeledWindow) else window
    return np.array([math.nan if v is None else v for v in vals], dtype=np.float64)


def signature_width(depth: int = 2) -> int:
    # (value, indicator) lead-lagged into four dimensions
    return feature_count(4, depth)


def window_features_signature(window, depth: int = 2) -> np.ndarray:
    """Indicator-augment, lead-lag, then take the depth-``depth`` signature."""
    stream = augment_with_indicator(_values(window))
    return signature(lead_lag(stream), depth).coeffs.copy()


def signature_features(values: np.ndarray, depth: int = 2) -> np.ndarray:
    """Row-wise :func:`window_features_signature` for a ``(B, k)`` array."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return np.zeros((0, signature_width(depth)))
    return batch_signature(batch_lead_lag(batch_augment_with_indicator(values)), depth)


def rmssd(values) -> float:
    """Root mean square of successive differences, skipping missing responses."""
    x = _values(values)
    x = x[~np.isnan(x)]
    if x.size < 2:
        raise ValueError("rmssd needs at least two non-missing values")
    return float(np.sqrt(np.mean(np.diff(x) ** 2)))


def window_features_baseline(window, kind: str) -> np.ndarray:
    x = _values(window)
    present = x[~np.isnan(x)]
    if present.size < 2:
        raise ValueError("window needs at least two non-missing values")
    mean = float(present.mean())
    miss = float(np.isnan(x).sum())
    if kind == "Mean":
        return np.array([mean])
    if kind == "Rmssd":
        return np.array([rmssd(x)])
    if kind == "MissRes":
        return np.array([miss])
    if kind == "MRM":
        return np.array([mean, rmssd(x), miss])
    raise ValueError(f"unknown baseline kind {kind!r}; expected one of {BASELINE_KINDS}")


def _batch_rmssd(values: np.ndarray) -> np.ndarray:
    out = np.empty(len(values))
    for i, row in enumerate(values):
        row = row[~np.isnan(row)]
        out[i] = np.sqrt(np.mean(np.diff(row) ** 2))
    return out


def baseline_features(values: np.ndarray, kind: str) -> np.ndarray:
    """Row-wise :func:`window_features_baseline` for a ``(B, k)`` array."""
    values = np.asarray(values, dtype=np.float64)
    present = ~np.isnan(values)
    if np.any(present.sum(axis=1) < 2):
        raise ValueError("every window needs at least two non-missing values")
    cols = {
        "Mean": lambda: np.nanmean(values, axis=1),
        "Rmssd": lambda: _batch_rmssd(values),
        "MissRes": lambda: (~present).sum(axis=1).astype(np.float64),
    }
    if kind in cols:
        return cols[kind]()[:, None]
    if kind == "MRM":
        return np.column_stack([cols["Mean"](), cols["Rmssd"](), cols["MissRes"]()])
    raise ValueError(f"unknown baseline kind {kind!r}; expected one of {BASELINE_KINDS}")


def featurize(values: np.ndarray, kind: str, depth: int = 2) -> np.ndarray:
    """Feature matrix for model ``kind`` (one of :data:`MODEL_KINDS`)."""
    if kind == "Sig":
        return signature_features(values, depth)
    return baseline_features(values, kind)


def feature_names(kind: str, depth: int = 2) -> list[str]:
    if kind == "Sig":
        letters = {1: "v", 2: "m", 3: "v'", 4: "m'"}
        return ["S(" + ",".join(letters[i] for i in w) + ")" for w in words(4, depth)]
    return {"Mean": ["mean"], "Rmssd": ["rmssd"], "MissRes": ["missing"],
            "MRM": ["mean", "rmssd", "missing"]}[kind]


def stack_windows(windows: Sequence[LabeledWindow]) -> np.ndarray:
    return np.array([_values(w) for w in windows]).reshape(len(windows), -1)
