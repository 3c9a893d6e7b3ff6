import io
import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moodsig.cohort import Scale, adherence, ingest_csv, label_episodes, read_rows
from moodsig.synth import (
    GeneratorConfig,
    csv_text,
    episode_prone_fraction,
    generate,
    generate_cohort,
    null_config,
    write_csv,
)

SMALL = GeneratorConfig(n_patients=30, weeks_min=60, weeks_max=120, seed=11)


@pytest.fixture(scope="module")
def default_cohort():
    return generate(GeneratorConfig())


@pytest.fixture(scope="module")
def calibration():
    stats = []
    for seed in range(20):
        records = generate_cohort(GeneratorConfig(seed=seed))
        stats.append((episode_prone_fraction(records, Scale.DEPRESSION),
                      episode_prone_fraction(records, Scale.MANIA),
                      np.mean([adherence(r) for r in records])))
    return np.array(stats)


class TestCalibration:
    def test_depression_prevalence(self, calibration):
        assert abs(calibration[:, 0].mean() - 0.59) <= 0.05

    def test_mania_prevalence(self, calibration):
        assert abs(calibration[:, 1].mean() - 0.69) <= 0.05

    def test_adjusted_adherence_near_cohort_level(self, calibration):
        assert 0.55 <= calibration[:, 2].mean() <= 0.70

    def test_default_cohort_shape(self, default_cohort):
        assert len(default_cohort.patients) == 261
        weeks = [p.record.n_weeks for p in default_cohort.patients]
        assert 240 <= min(weeks) and max(weeks) <= 260


class TestRoundTrip:
    @pytest.mark.parametrize("scale", list(Scale))
    def test_planted_onsets_relabel_exactly(self, default_cohort, scale):
        for p in default_cohort.patients:
            assert tuple(label_episodes(p.record, scale).onsets) == p.onsets[scale], p.record.patient_id

    def test_csv_ingests_to_the_same_records(self, default_cohort):
        back = ingest_csv(io.StringIO(csv_text(default_cohort)))
        assert back == default_cohort.records

    def test_duplicates_are_written_and_dropped(self, default_cohort):
        text = csv_text(default_cohort)
        rows = read_rows(io.StringIO(text))
        answered = sum(1 for p in default_cohort.patients for w in p.record.weeks if w.qids is not None)
        present_rows = sum(1 for r in rows if r.qids is not None)
        assert present_rows > answered

    def test_write_csv(self, tmp_path):
        cohort = generate(SMALL)
        path = write_csv(cohort, tmp_path / "c.csv")
        assert path.read_text(encoding="utf-8") == csv_text(cohort)
        assert path.read_text(encoding="utf-8").splitlines()[0] == "patient_id,date,qids,asrm,diagnosis"


class TestDeterminism:
    def test_same_seed_byte_identical(self):
        assert csv_text(generate(SMALL)) == csv_text(generate(SMALL))

    def test_different_seed_differs(self):
        assert csv_text(generate(SMALL)) != csv_text(generate(replace(SMALL, seed=12)))

    def test_patient_streams_independent_of_cohort_size(self):
        a = generate(replace(SMALL, n_patients=5))
        b = generate(replace(SMALL, n_patients=12))
        for pa, pb in zip(a.patients, b.patients):
            assert pa.rows == pb.rows


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), ramp=st.integers(0, 8), slope=st.floats(0, 6))
def test_scores_within_instrument_ranges(seed, ramp, slope):
    cfg = GeneratorConfig(n_patients=8, weeks_min=40, weeks_max=80, seed=seed,
                          depression=replace(GeneratorConfig().depression, ramp_length=ramp, ramp_slope=slope,
                                             prone_fraction=1.0))
    for rec in generate(cfg).records:
        for scale in Scale:
            x = rec.series(scale)
            x = x[~np.isnan(x)]
            lo, hi = scale.score_range
            assert np.all((x >= lo) & (x <= hi))
            assert np.all(x == np.rint(x))


class TestConfig:
    def test_zero_patients(self):
        with pytest.raises(ValueError, match="n_patients"):
            GeneratorConfig(n_patients=0)

    @pytest.mark.parametrize("field_, value", [("missing_base", 1.5), ("missing_ramp", -0.1), ("duplicate_rate", 2.0)])
    def test_probabilities_checked(self, field_, value):
        with pytest.raises(ValueError, match=field_):
            GeneratorConfig(**{field_: value})

    def test_negative_ramp(self):
        with pytest.raises(ValueError, match="ramp_length"):
            replace(GeneratorConfig(), mania=replace(GeneratorConfig().mania, ramp_length=-1))

    def test_zero_eligible_cohort(self):
        base = GeneratorConfig(n_patients=10, weeks_min=50, weeks_max=60)
        cfg = replace(base, depression=replace(base.depression, prone_fraction=0.0),
                      mania=replace(base.mania, prone_fraction=0.0))
        with pytest.raises(ValueError, match="no eligible patients"):
            generate(cfg)

    def test_dict_roundtrip_and_partial_override(self):
        cfg = GeneratorConfig.from_json(json.dumps({"seed": 3, "mania": {"ramp_length": 2}}))
        assert cfg.seed == 3 and cfg.mania.ramp_length == 2
        assert cfg.mania.ramp_slope == GeneratorConfig().mania.ramp_slope
        assert GeneratorConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_keys(self):
        with pytest.raises(ValueError, match="unknown"):
            GeneratorConfig.from_dict({"n_patient": 3})
        with pytest.raises(ValueError, match="unknown mania"):
            GeneratorConfig.from_dict({"mania": {"slope": 3}})


def test_null_config_has_no_ramp_and_uniform_missingness():
    cfg = null_config(n_patients=20, weeks_min=60, weeks_max=60)
    assert cfg.mania.ramp_length == 0 and cfg.missing_ramp == cfg.missing_base
    records = generate(cfg).records
    assert episode_prone_fraction(records, Scale.MANIA) == 1.0
    assert episode_prone_fraction(records, Scale.DEPRESSION) == 0.0
