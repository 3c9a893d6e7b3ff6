"""Writers for evaluation outputs: CSV tables, SVG charts and the run manifest.

Every writer is deterministic: rows are ordered by (scale, k, model, seed),
floats are written with ``repr`` so values round-trip exactly, and files
use ``\\n`` line endings regardless of platform.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import platform
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy

from . import __version__
from .evaluation import EvaluationResult, TransitionResult
from .metrics import METRIC_NAMES

METRICS_COLUMNS = ("model", "k", "seed") + METRIC_NAMES
SERIES_COLUMNS = ("metric", "model", "k", "mean", "sd", "n")
COMPARISON_COLUMNS = ("k", "metric", "model_a", "model_b", "mean_difference", "t_statistic",
                      "p_value", "repetitions", "degenerate")
TRANSITION_COLUMNS = ("n", "auc_mean", "auc_sd", "repetitions", "onsets", "skipped_onsets", "skipped_repetitions")

_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _num(v) -> str:
    """Exact, locale-free text for a number; blank for missing or undefined."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([c if isinstance(c, str) else _num(c) for c in row])
    return buf.getvalue()


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def mean_sd(mean: float, sd: float, digits: int = 3) -> str:
    """``0.792(0.031)`` style cell; blank when no repetition completed."""
    if math.isnan(mean):
        return ""
    sd_text = "" if math.isnan(sd) else f"{sd:.{digits}f}"
    return f"{mean:.{digits}f}({sd_text})"


# --------------------------------------------------------------------------
# main evaluation


def metrics_csv(results: Sequence[EvaluationResult]) -> str:
    """One row per (model, k, seed); skipped repetitions are absent."""
    rows = []
    for res in sorted(results, key=lambda r: r.k):
        for model in res.models:
            for o in res.outcomes[model]:
                if o.completed:
                    rows.append([model, o.k, o.seed] + [getattr(o.report, m) for m in METRIC_NAMES])
    return _csv(METRICS_COLUMNS, rows)


def series_csv(results: Sequence[EvaluationResult]) -> str:
    rows = []
    for metric in METRIC_NAMES:
        for model in results[0].models if results else ():
            for res in sorted(results, key=lambda r: r.k):
                mean, sd, n = res.summary(model, metric)
                rows.append([metric, model, res.k, mean, sd, n])
    return _csv(SERIES_COLUMNS, rows)


def summary_csv(results: Sequence[EvaluationResult], digits: int = 3) -> str:
    """Aggregate table: one row per (k, model), one mean(SD) cell per metric."""
    rows = []
    for res in sorted(results, key=lambda r: r.k):
        for model in res.models:
            cells = []
            for metric in METRIC_NAMES:
                mean, sd, _ = res.summary(model, metric)
                cells.append(mean_sd(mean, sd, digits))
            rows.append([str(res.k), model] + cells + [str(len(res.reports(model)))])
    return _csv(("k", "model") + METRIC_NAMES + ("completed",), rows)


def comparison_csv(results: Sequence[EvaluationResult], metrics: Sequence[str] = ("accuracy", "auc")) -> str:
    """Corrected paired t-tests for every model pair, per k and metric.

    Pairs with fewer than two jointly completed repetitions are omitted.
    """
    rows = []
    for res in sorted(results, key=lambda r: r.k):
        for metric in metrics:
            for a, b in itertools.combinations(res.models, 2):
                try:
                    c = res.compare(a, b, metric)
                except ValueError:
                    continue
                rows.append([res.k, metric, a, b, c.mean_difference, c.t_statistic, c.p_value,
                             c.repetitions, c.degenerate])
    return _csv(COMPARISON_COLUMNS, rows)


def skipped_rows(results: Sequence[EvaluationResult]) -> list[dict]:
    return [
        {"model": o.model, "k": o.k, "seed": o.seed, "reason": o.skipped}
        for res in sorted(results, key=lambda r: r.k)
        for o in res.skipped()
    ]


def series_svg(results: Sequence[EvaluationResult], metric: str, title: str = "") -> str:
    """Line chart of mean ``metric`` against window length, one line per model.

    Window lengths are placed at equal spacing in grid order.
    """
    width, height = 640, 400
    left, right, top, bottom = 60, 130, 40, 50
    res = sorted(results, key=lambda r: r.k)
    ks = [r.k for r in res]
    models = res[0].models if res else ()
    series = {m: [r.summary(m, metric)[0] for r in res] for m in models}
    finite = [v for vals in series.values() for v in vals if not math.isnan(v)]
    lo, hi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if hi - lo < 1e-9:
        lo, hi = lo - 0.05, hi + 0.05
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    pw, ph = width - left - right, height - top - bottom

    def x_at(i):
        return left + (pw * i / (len(ks) - 1) if len(ks) > 1 else pw / 2)

    def y_at(v):
        return top + ph * (hi - v) / (hi - lo)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{title or metric}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for i, k in enumerate(ks):
        x = x_at(i)
        out.append(f'<line x1="{x:.1f}" y1="{top + ph}" x2="{x:.1f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.1f}" y="{top + ph + 18}" text-anchor="middle">{k}</text>')
    for j in range(5):
        v = lo + (hi - lo) * j / 4
        y = y_at(v)
        out.append(f'<line x1="{left - 5}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end">{v:.3f}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">window length k (weeks)</text>')
    for idx, m in enumerate(models):
        colour = _COLOURS[idx % len(_COLOURS)]
        pts = [(x_at(i), y_at(v)) for i, v in enumerate(series[m]) if not math.isnan(v)]
        if len(pts) > 1:
            joined = " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
            out.append(f'<polyline points="{joined}" fill="none" stroke="{colour}" stroke-width="2"/>')
        for x, y in pts:
            out.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="{colour}"/>')
        ly = top + 10 + 18 * idx
        out.append(f'<line x1="{left + pw + 15}" y1="{ly}" x2="{left + pw + 35}" y2="{ly}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 40}" y="{ly + 4}">{m}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_evaluation(out_dir, scale: str, results: Sequence[EvaluationResult]) -> list[Path]:
    """Write all tables and charts of one scale; returns the written paths."""
    out_dir = Path(out_dir)
    written = [
        _write(out_dir / f"metrics_{scale}.csv", metrics_csv(results)),
        _write(out_dir / f"summary_{scale}.csv", summary_csv(results)),
        _write(out_dir / f"comparisons_{scale}.csv", comparison_csv(results)),
        _write(out_dir / f"series_{scale}.csv", series_csv(results)),
    ]
    for metric in METRIC_NAMES:
        written.append(_write(out_dir / f"{scale}_{metric}.svg",
                              series_svg(results, metric, f"{scale}: mean {metric}")))
    return written


# --------------------------------------------------------------------------
# transition experiment


def transition_csv(results: Sequence[TransitionResult]) -> str:
    rows = []
    for r in results:
        rows.append([r.n, r.mean, r.sd, int(r.aucs.size), r.onsets, sum(r.skips.values()),
                     sum(r.skipped_repetitions.values())])
    return _csv(TRANSITION_COLUMNS, rows)


def transition_table(by_scale: dict[str, Sequence[TransitionResult]], digits: int = 3) -> str:
    """One row per ``n`` and one mean(SD) AUC column per scale."""
    scales = list(by_scale)
    grid = sorted({r.n for rs in by_scale.values() for r in rs})
    lookup = {(s, r.n): r for s in scales for r in by_scale[s]}
    rows = []
    for n in grid:
        cells = []
        for s in scales:
            r = lookup.get((s, n))
            cells.append(mean_sd(r.mean, r.sd, digits) if r is not None else "")
        rows.append([str(n)] + cells)
    return _csv(("n",) + tuple(scales), rows)


def write_transition(out_dir, by_scale: dict[str, Sequence[TransitionResult]]) -> list[Path]:
    out_dir = Path(out_dir)
    written = [_write(out_dir / f"transition_{s}.csv", transition_csv(rs)) for s, rs in by_scale.items()]
    written.append(_write(out_dir / "transition_table.csv", transition_table(by_scale)))
    return written


# --------------------------------------------------------------------------
# manifest


def versions() -> dict:
    return {
        "moodsig": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def write_manifest(out_dir, manifest: dict) -> Path:
    """Write ``manifest.json``; ``versions`` is filled in when absent."""
    manifest = dict(manifest)
    manifest.setdefault("versions", versions())
    text = json.dumps(manifest, indent=2, sort_keys=True, allow_nan=False, default=str) + "\n"
    return _write(Path(out_dir) / "manifest.json", text)
