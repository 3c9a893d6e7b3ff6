"""Command-line entry point: ``moodsig {validate,generate,run,transition,sig-dump}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .cohort import (
    DEFAULT_RULES,
    EpisodeRule,
    IngestError,
    PatientRecord,
    Scale,
    adherence,
    build_cohort,
    label_episodes,
    read_rows,
    response_span,
)
from .elasticnet import ALPHA_GRID, LAMBDA_GRID
from .evaluation import TRANSITION_GRID, EvaluationConfig, prepare_windows, repeated_evaluation, transition_experiment
from .features import MODEL_KINDS, feature_names
from .report import write_evaluation, write_manifest, write_transition
from .signature import augment_with_indicator, lead_lag, signature
from .synth import GeneratorConfig, csv_text, generate

logger = logging.getLogger("moodsig")

OUTPUT_ENV = "MOODSIG_OUTPUT_DIR"
DEFAULT_OUTPUT = "moodsig-output"
WINDOW_GRID = (4, 6, 8, 12, 20, 50)

EXIT_OK, EXIT_INCOMPLETE, EXIT_ERROR = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Everything a ``run`` or ``transition`` invocation depends on.

    ``input`` names a cohort CSV; when it is ``None`` the cohort is
    synthesized from ``generator`` (a :class:`GeneratorConfig` mapping,
    empty for the defaults).
    """

    input: str | None = None
    generator: dict = field(default_factory=dict)
    scales: tuple[str, ...] = ("depression", "mania")
    windows: tuple[int, ...] = WINDOW_GRID
    models: tuple[str, ...] = MODEL_KINDS
    qids_threshold: int = DEFAULT_RULES[Scale.DEPRESSION].threshold
    qids_min_duration: int = DEFAULT_RULES[Scale.DEPRESSION].min_duration
    asrm_threshold: int = DEFAULT_RULES[Scale.MANIA].threshold
    asrm_min_duration: int = DEFAULT_RULES[Scale.MANIA].min_duration
    lambda_grid: tuple[float, ...] = LAMBDA_GRID
    alpha_grid: tuple[float, ...] = ALPHA_GRID
    repetitions: int = 100
    folds: int = 10
    seed: int = 0
    workers: int = 1
    test_fraction: float = 1.0 / 3.0
    depth: int = 2
    n_grid: tuple[int, ...] = TRANSITION_GRID
    interval_len: int = 6
    wellness_offset: int = 14
    output_dir: str | None = None

    def __post_init__(self):
        for name in ("scales", "windows", "models", "lambda_grid", "alpha_grid", "n_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.scales:
            raise ConfigError("scales must not be empty")
        for s in self.scales:
            if s not in {x.value for x in Scale}:
                raise ConfigError(f"unknown scale {s!r}; choose depression or mania")
        if not self.windows or any(int(k) != k or k < 2 for k in self.windows):
            raise ConfigError(f"window lengths must be integers >= 2, got {list(self.windows)}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        bad = set(self.models) - set(MODEL_KINDS)
        if bad or not self.models:
            raise ConfigError(f"models must be a non-empty subset of {list(MODEL_KINDS)}")
        if not self.lambda_grid or any(not 0.0 <= v <= 1.0 for v in self.lambda_grid):
            raise ConfigError("lambda_grid values must lie in [0, 1]")
        if not self.alpha_grid or any(v < 0 for v in self.alpha_grid):
            raise ConfigError("alpha_grid values must be non-negative")
        if not self.n_grid or any(n < 0 for n in self.n_grid):
            raise ConfigError("n_grid values must be non-negative")
        if self.input is None:
            GeneratorConfig.from_dict(self.generator)
        try:
            self.rules()
            self.evaluation()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def rules(self) -> dict[Scale, EpisodeRule]:
        return {
            Scale.DEPRESSION: EpisodeRule(self.qids_threshold, self.qids_min_duration),
            Scale.MANIA: EpisodeRule(self.asrm_threshold, self.asrm_min_duration),
        }

    def evaluation(self) -> EvaluationConfig:
        return EvaluationConfig(lambda_grid=self.lambda_grid, alpha_grid=self.alpha_grid, folds=self.folds,
                                test_fraction=self.test_fraction, depth=self.depth, workers=self.workers)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path: str | None, overrides: dict) -> RunConfig:
    """File keys first, then every override that is not ``None``."""
    data: dict = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must contain a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def output_dir(explicit: str | None) -> Path:
    return Path(explicit or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def load_records(config: RunConfig) -> tuple[list[PatientRecord], dict]:
    """Cohort records plus a provenance entry for the manifest."""
    if config.input is not None:
        raw = Path(config.input).read_bytes()
        records = build_cohort(read_rows(config.input))
        return records, {"input": config.input, "sha256": _sha256(raw)}
    cohort = generate(GeneratorConfig.from_dict(config.generator))
    text = csv_text(cohort)
    return cohort.records, {"generator": cohort.config.to_dict(), "sha256": _sha256(text.encode("utf-8"))}


# --------------------------------------------------------------------------
# validate


def _mean_sem(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    sem = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), sem


def validation_report(records: Sequence[PatientRecord], n_rows: int,
                      rules: dict[Scale, EpisodeRule] | None = None, min_span: int = 5) -> dict:
    """Cohort summary with per-scale exclusion accounting."""
    rules = rules or DEFAULT_RULES
    adh_mean, adh_sem = _mean_sem([adherence(r) for r in records])
    report = {
        "rows": n_rows,
        "patients": len(records),
        "weekly_observations": sum(len(r.weeks) for r in records),
        "weeks_per_patient_mean": float(np.mean([r.n_weeks for r in records])) if records else 0.0,
        "adherence_mean": adh_mean,
        "adherence_sem": adh_sem,
        "scales": {},
    }
    for scale in Scale:
        no_resp = short = no_episode = eligible = onsets = episode_weeks = 0
        adh = []
        for r in records:
            span = response_span(r, scale)
            if span == 0:
                no_resp += 1
                continue
            if span < min_span:
                short += 1
                continue
            mask = label_episodes(r, scale, rules[scale])
            if not mask.flags.any():
                no_episode += 1
                continue
            eligible += 1
            onsets += len(mask.onsets)
            episode_weeks += int(mask.flags.sum())
            adh.append(adherence(r, scale))
        monitored = len(records) - no_resp - short
        mean, sem = _mean_sem(adh)
        report["scales"][scale.value] = {
            "threshold": rules[scale].threshold,
            "min_duration": rules[scale].min_duration,
            "excluded_no_responses": no_resp,
            f"excluded_span_below_{min_span}": short,
            "excluded_no_episode": no_episode,
            "eligible": eligible,
            "episode_prevalence": eligible / monitored if monitored else math.nan,
            "episodes": onsets,
            "episode_weeks": episode_weeks,
            "eligible_adherence_mean": mean,
            "eligible_adherence_sem": sem,
        }
    return report


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.3f}"
    return str(v)


def format_report(report: dict) -> str:
    lines = [f"{k}: {_fmt(v)}" for k, v in report.items() if k != "scales"]
    for scale, entries in report["scales"].items():
        lines.append(f"[{scale}]")
        lines += [f"  {k}: {_fmt(v)}" for k, v in entries.items()]
    return "\n".join(lines)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def cmd_validate(args) -> int:
    config = load_config(args.config, {})
    rows = read_rows(args.input)
    records = build_cohort(rows)
    report = validation_report(records, len(rows), config.rules(), args.min_span)
    if args.json:
        print(json.dumps(_json_safe(report), indent=2))
    else:
        print(format_report(report))
    return EXIT_OK


# --------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    data: dict = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read generator config {args.config}: {exc}") from None
        data = data.get("generator", data)
    for key in ("seed", "n_patients"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    cohort = generate(GeneratorConfig.from_dict(data))
    out = Path(args.out) if args.out else output_dir(None) / "cohort.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(cohort))
    print(f"wrote {len(cohort.patients)} patients to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# run and transition


def _run_overrides(args) -> dict:
    keys = ("input", "scales", "windows", "models", "repetitions", "folds", "seed", "workers",
            "lambda_grid", "alpha_grid", "output_dir", "n_grid")
    return {k: getattr(args, k, None) for k in keys}


def _start(args, command: str) -> tuple[RunConfig, Path, dict]:
    config = load_config(args.config, _run_overrides(args))
    out = output_dir(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"command": command, "config": config.to_dict(), "output_dir": str(out),
                "status": "started", "failures": [], "outputs": {}}
    return config, out, manifest


def _finish(out: Path, manifest: dict, written: Sequence[Path]) -> None:
    manifest["outputs"] = {p.name: _sha256(p.read_bytes()) for p in sorted(written)}
    write_manifest(out, _json_safe(manifest))


def cmd_run(args) -> int:
    config, out, manifest = _start(args, "run")
    written: list[Path] = []
    try:
        records, source = load_records(config)
        manifest["source"] = source
        evaluation = config.evaluation()
        seeds = [config.seed + r for r in range(config.repetitions)]
        manifest["seeds"] = seeds
        manifest["scales"] = {}
        for scale_name in config.scales:
            scale = Scale(scale_name)
            results, windows = [], {}
            for k in config.windows:
                try:
                    data = prepare_windows(records, scale, k, config.models, config.depth, config.rules()[scale])
                except ValueError as exc:
                    if "no eligible patients" in str(exc):
                        raise
                    manifest["failures"].append({"scale": scale_name, "k": k, "seed": None, "model": None,
                                                 "reason": str(exc)})
                    continue
                logger.info("%s k=%d: %d windows, %d patients", scale_name, k, len(data.table), len(data.records))
                res = repeated_evaluation(data, repetitions=config.repetitions, base_seed=config.seed,
                                          config=evaluation)
                results.append(res)
                windows[str(k)] = {"windows": len(data.table), "positives": int(data.table.labels.sum()),
                                   "patients": len(data.records)}
                for o in res.skipped():
                    manifest["failures"].append({"scale": scale_name, "k": k, "seed": o.seed,
                                                 "model": o.model, "reason": o.skipped})
            manifest["scales"][scale_name] = {"windows": windows}
            if results:
                written += write_evaluation(out, scale_name, results)
    except (ValueError, OSError) as exc:
        manifest["status"] = "error"
        manifest["error"] = str(exc)
        _finish(out, manifest, written)
        raise
    manifest["status"] = "complete" if not manifest["failures"] else "incomplete"
    _finish(out, manifest, written)
    print(f"wrote {len(written)} files to {out} ({manifest['status']})")
    return EXIT_OK if not manifest["failures"] else EXIT_INCOMPLETE


def cmd_transition(args) -> int:
    config, out, manifest = _start(args, "transition")
    written: list[Path] = []
    try:
        records, source = load_records(config)
        manifest["source"] = source
        manifest["seeds"] = [config.seed + r for r in range(config.repetitions)]
        by_scale = {}
        for scale_name in config.scales:
            scale = Scale(scale_name)
            res = transition_experiment(records, scale, config.n_grid, config.interval_len, config.wellness_offset,
                                        config.repetitions, config.seed, config.evaluation(),
                                        config.rules()[scale])
            by_scale[scale_name] = res
            for r in res:
                if r.skips:
                    manifest.setdefault("skipped_onsets", {})[f"{scale_name}/n={r.n}"] = dict(r.skips)
                for reason, count in sorted(r.skipped_repetitions.items()):
                    manifest["failures"].append({"scale": scale_name, "n": r.n, "repetitions": count,
                                                 "reason": reason})
        written += write_transition(out, by_scale)
    except (ValueError, OSError) as exc:
        manifest["status"] = "error"
        manifest["error"] = str(exc)
        _finish(out, manifest, written)
        raise
    manifest["status"] = "complete" if not manifest["failures"] else "incomplete"
    _finish(out, manifest, written)
    print(f"wrote {len(written)} files to {out} ({manifest['status']})")
    return EXIT_OK if not manifest["failures"] else EXIT_INCOMPLETE


# --------------------------------------------------------------------------
# sig-dump


def parse_stream(text: str) -> list[float | None]:
    """``"3,,5"`` -> ``[3.0, None, 5.0]``; blank entries are missing."""
    out = []
    for i, tok in enumerate(text.split(",")):
        tok = tok.strip()
        if tok == "":
            out.append(None)
            continue
        try:
            out.append(float(tok))
        except ValueError:
            raise ConfigError(f"stream entry {i + 1} ({tok!r}) is not a number") from None
    return out


def cmd_sig_dump(args) -> int:
    values = parse_stream(args.values)
    if args.raw:
        if any(v is None for v in values):
            raise ConfigError("--raw needs a stream without missing entries")
        sig = signature(lead_lag(values), args.depth)
        names = None
    else:
        sig = signature(lead_lag(augment_with_indicator(values)), args.depth)
        names = feature_names("Sig", args.depth)
    d = sig.to_dict()
    if names is not None:
        for entry, name in zip(d["words"], names):
            entry["name"] = name
    print(json.dumps(d, indent=2))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags override its keys")
    p.add_argument("--input", help="cohort CSV (default: synthesize from the generator config)")
    p.add_argument("--scales", type=_names, help="comma-separated: depression,mania")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int, help="base seed; repetition r uses seed + r")
    p.add_argument("--workers", type=int, help="parallel repetition workers")
    p.add_argument("--lambda-grid", type=_floats, help="comma-separated mixing values in [0, 1]")
    p.add_argument("--alpha-grid", type=_floats, help="comma-separated penalty strengths")
    p.add_argument("--output-dir", help=f"output directory (default: ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moodsig", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a cohort CSV and summarize it")
    p.add_argument("input")
    p.add_argument("--config", help="JSON run config (only the threshold keys are used)")
    p.add_argument("--min-span", type=int, default=5, help="minimum response span in weeks")
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("generate", help="write a synthetic cohort CSV")
    p.add_argument("--config", help="JSON generator config, or a run config with a 'generator' key")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-patients", type=int)
    p.add_argument("--out", help="output CSV (default: <output dir>/cohort.csv)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="repeated evaluation of every model over the window grid")
    _add_run_options(p)
    p.add_argument("--windows", type=_ints, help="comma-separated window lengths")
    p.add_argument("--models", type=_names, help=f"comma-separated subset of {','.join(MODEL_KINDS)}")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("transition", help="precursor vs wellness interval experiment")
    _add_run_options(p)
    p.add_argument("--n-grid", type=_ints, help="comma-separated gaps n before onset")
    p.set_defaults(func=cmd_transition)

    p = sub.add_parser("sig-dump", help="print the signature of one stream as JSON")
    p.add_argument("values", help="comma-separated scores; blank entries are missing, e.g. '3,,5,5'")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--raw", action="store_true",
                   help="lead-lag the scores alone, without the missing-response channel")
    p.set_defaults(func=cmd_sig_dump)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, IngestError, ValueError, OSError) as exc:
        print(f"moodsig {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
