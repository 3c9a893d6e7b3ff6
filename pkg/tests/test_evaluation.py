import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from moodsig.cohort import PatientRecord, Scale, WeeklyObservation, label_episodes
from moodsig.evaluation import (
    EvaluationConfig,
    corrected_paired_ttest,
    eligible_with_masks,
    fit_and_score,
    prepare_windows,
    repeated_evaluation,
    stratified_patient_split,
    transition_experiment,
    transition_samples,
)
from moodsig.synth import GeneratorConfig, generate

FAST = EvaluationConfig(lambda_grid=(0.5,), alpha_grid=(0.01,), folds=3)
SMALL = GeneratorConfig(n_patients=45, weeks_min=100, weeks_max=140, seed=5)


def record(pid, qids, missing=()):
    weeks = [WeeklyObservation(t, None if t in missing else int(v), 0) for t, v in enumerate(qids)]
    return PatientRecord(pid, tuple(weeks))


@pytest.fixture(scope="module")
def small_records():
    return generate(SMALL).records


@pytest.fixture(scope="module")
def default_records():
    return generate(GeneratorConfig()).records


def masks_for(records, scale=Scale.DEPRESSION):
    return {r.patient_id: label_episodes(r, scale) for r in records}


class TestSplit:
    def test_two_identical_patients(self):
        q = [2] * 10 + [14, 14] + [2] * 10
        recs = [record("a", q), record("b", q)]
        plan = stratified_patient_split(recs, masks_for(recs), test_fraction=0.5, seed=0)
        assert len(plan.train_patient_ids) == len(plan.test_patient_ids) == 1
        assert plan.train_ratio == plan.test_ratio == plan.cohort_ratio

    def test_deterministic_given_seed(self, small_records):
        kept, masks = eligible_with_masks(small_records, Scale.DEPRESSION)
        assert stratified_patient_split(kept, masks, seed=4) == stratified_patient_split(kept, masks, seed=4)

    def test_seeds_resample_the_split(self, small_records):
        kept, masks = eligible_with_masks(small_records, Scale.DEPRESSION)
        tests = {stratified_patient_split(kept, masks, seed=s).test_patient_ids for s in range(20)}
        assert len(tests) == 20

    def test_disjoint_and_covering(self, small_records):
        kept, masks = eligible_with_masks(small_records, Scale.MANIA)
        plan = stratified_patient_split(kept, masks, seed=1)
        train, test = set(plan.train_patient_ids), set(plan.test_patient_ids)
        assert not train & test
        assert train | test == {r.patient_id for r in kept}
        assert len(test) == round(len(kept) / 3)

    @pytest.mark.parametrize("scale", list(Scale))
    def test_ratio_within_ten_percent_over_100_seeds(self, default_records, scale):
        kept, masks = eligible_with_masks(default_records, scale)
        worst = max(stratified_patient_split(kept, masks, seed=s).ratio_deviation for s in range(100))
        assert worst <= 0.10

    def test_degenerate_cohort(self):
        recs = [record(p, [2] * 12) for p in "abc"]
        with pytest.raises(ValueError, match="cannot stratify"):
            stratified_patient_split(recs, masks_for(recs), seed=0)

    def test_too_few_patients(self):
        recs = [record("a", [2] * 5 + [14, 14])]
        with pytest.raises(ValueError, match="at least 2"):
            stratified_patient_split(recs, masks_for(recs))


class TestRepeatedEvaluation:
    def test_counting_and_pairing(self, small_records):
        res = repeated_evaluation(small_records, Scale.DEPRESSION, k=4, repetitions=2, base_seed=9, config=FAST)
        assert res.models == ("Sig", "MRM", "Mean", "Rmssd", "MissRes")
        assert sum(len(res.reports(m)) for m in res.models) == 2 * 5
        for m in res.models:
            outs = res.outcomes[m]
            assert [o.seed for o in outs] == [9, 10]
            assert [o.report.seed for o in outs] == [9, 10] and all(o.report.model == m for o in outs)
            assert [(o.n_train, o.n_test) for o in outs] == [(o.n_train, o.n_test) for o in res.outcomes["Sig"]]
        assert [p.seed for p in res.plans] == [9, 10]

    def test_reproducible_and_worker_independent(self, small_records):
        data = prepare_windows(small_records, Scale.MANIA, 6, ("Sig", "Mean"))
        a = repeated_evaluation(data, repetitions=3, config=FAST)
        b = repeated_evaluation(data, repetitions=3, config=replace(FAST, workers=2))
        for m in ("Sig", "Mean"):
            for metric in ("accuracy", "auc", "ppv"):
                np.testing.assert_array_equal(a.metric_values(m, metric), b.metric_values(m, metric))

    def test_one_class_sets_are_skipped_with_reason(self):
        late = [3] * 20 + [15, 15] + [3] * 8
        early = [3, 15, 15] + [3] * 27
        recs = [record("late", late), record("e1", early), record("e2", early)]
        res = repeated_evaluation(recs, Scale.DEPRESSION, ("Sig", "Mean"), k=4, repetitions=4,
                                  config=replace(FAST, folds=2))
        skipped = res.skipped()
        assert len(skipped) == 8
        assert {o.skipped for o in skipped} <= {"test set has a single class", "training set has a single class"}
        for o in res.outcomes["Sig"]:
            assert o.skipped == "test set has a single class" or "late" in res.plans[o.seed].test_patient_ids
        mean, sd, n = res.summary("Sig", "accuracy")
        assert n == 0 and math.isnan(mean)

    def test_missres_without_missingness_is_uninformative(self):
        cfg = replace(SMALL, missing_base=0.0, missing_ramp=0.0)
        res = repeated_evaluation(generate(cfg).records, Scale.DEPRESSION, ("MissRes",), k=4, repetitions=1,
                                  config=FAST)
        assert res.reports("MissRes")[0].auc == 0.5

    def test_mean_model_detects_planted_ramp(self, default_records):
        # regression value: 0.935 observed at seed 0
        res = repeated_evaluation(default_records, Scale.DEPRESSION, ("Mean",), k=4, repetitions=1, config=FAST)
        assert res.reports("Mean")[0].auc > 0.85

    @pytest.mark.xfail(strict=True, reason="signature features are translation invariant, so windows "
                                           "inside an ongoing episode are separable by level only")
    def test_sig_auc_exceeds_mean_auc(self, default_records):
        data = prepare_windows(default_records, Scale.DEPRESSION, 4, ("Sig", "Mean"))
        res = repeated_evaluation(data, repetitions=2, config=FAST)
        assert res.summary("Sig", "auc")[0] > res.summary("Mean", "auc")[0]

    def test_unknown_model(self, small_records):
        with pytest.raises(ValueError, match="unknown model"):
            repeated_evaluation(small_records, Scale.DEPRESSION, ("Median",), k=4, repetitions=1)

    def test_empty_eligible_cohort(self):
        recs = [record(p, [2] * 12) for p in "abc"]
        with pytest.raises(ValueError, match="no eligible patients"):
            repeated_evaluation(recs, Scale.DEPRESSION, k=4, repetitions=1)


class TestLeakageGuards:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.groups = np.repeat([f"p{i}" for i in range(30)], 20)
        self.X = rng.normal(size=(600, 3))
        self.y = (self.X[:, 0] + rng.normal(size=600) > 1).astype(int)
        self.train = np.arange(400)
        self.test = np.arange(400, 600)

    def test_overlapping_rows_rejected(self):
        with pytest.raises(AssertionError, match="overlap"):
            fit_and_score(self.X, self.y, self.groups, self.train, np.arange(390, 600), FAST, 0)

    def test_shared_patient_rejected(self):
        with pytest.raises(AssertionError, match="both train and test"):
            fit_and_score(self.X, self.y, self.groups, np.arange(405), np.arange(405, 600), FAST, 0)

    def test_test_rows_do_not_influence_the_model(self):
        cfg = replace(FAST, lambda_grid=(0.0, 0.5, 1.0), alpha_grid=(0.01, 0.1))
        clean = fit_and_score(self.X, self.y, self.groups, self.train, self.test, cfg, 3)
        X, y = self.X.copy(), self.y.copy()
        y[self.test] = 1 - y[self.test]
        X[self.test, 1] = 1e6 * y[self.test]
        poisoned = fit_and_score(X, y, self.groups, self.train, self.test, cfg, 3)
        assert poisoned.model.to_json() == clean.model.to_json()
        np.testing.assert_array_equal(poisoned.cv.fold_auc, clean.cv.fold_auc)


class TestCorrectedTTest:
    def test_identical_series(self):
        r = corrected_paired_ttest([0.7, 0.8, 0.75], [0.7, 0.8, 0.75], 200, 100)
        assert (r.t_statistic, r.p_value, r.degenerate) == (0.0, 1.0, False)

    def test_formula_example(self):
        z = np.random.default_rng(1).normal(size=100)
        z = (z - z.mean()) / z.std(ddof=1)
        d = 0.02 + 0.01 * z            # mean 0.02, unbiased variance 1e-4
        r = corrected_paired_ttest(0.5 + d, np.full(100, 0.5), n_train=200, n_test=100)
        assert r.t_statistic == pytest.approx(2.80, abs=0.005)
        # oracle: the uncorrected paired t rescaled by the variance inflation
        plain = stats.ttest_rel(0.5 + d, np.full(100, 0.5))
        t_oracle = plain.statistic * math.sqrt((1 / 100) / (1 / 100 + 0.5))
        assert r.t_statistic == pytest.approx(t_oracle, rel=1e-10)
        assert r.p_value == pytest.approx(2 * stats.t.sf(t_oracle, 99), rel=1e-10)
        assert r.repetitions == 100

    def test_constant_nonzero_difference(self):
        r = corrected_paired_ttest([0.8, 0.8, 0.8], [0.7, 0.7, 0.7], 10, 5)
        assert r.p_value == 0.0 and r.degenerate and r.t_statistic == math.inf

    def test_per_repetition_sizes_use_mean_ratio(self):
        a, b = [0.1, 0.3, 0.2, 0.5], [0.2, 0.1, 0.1, 0.2]
        r1 = corrected_paired_ttest(a, b, [100, 300], [50, 150])
        r2 = corrected_paired_ttest(a, b, 200, 100)
        assert r1.t_statistic == r2.t_statistic

    def test_input_checks(self):
        with pytest.raises(ValueError, match="at least 2"):
            corrected_paired_ttest([0.1], [0.2], 10, 5)
        with pytest.raises(ValueError):
            corrected_paired_ttest([0.1, 0.2], [0.2], 10, 5)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=2, max_size=30))
    def test_p_value_in_unit_interval(self, pairs):
        a, b = zip(*pairs)
        r = corrected_paired_ttest(a, b, 200, 100)
        assert 0.0 <= r.p_value <= 1.0


class TestTransition:
    def test_interval_positions(self):
        q = list(range(20)) + [15, 15] + [2] * 5
        q = [min(v, 10) for v in q[:20]] + q[20:]
        rec = record("a", q)
        s = transition_samples([rec], masks_for([rec]), n=0)
        assert s.onsets == 1 and list(s.labels) == [1, 0]
        np.testing.assert_array_equal(s.values[0], q[14:20])
        np.testing.assert_array_equal(s.values[1], q[0:6])

    def test_overlapping_intervals_rejected(self):
        rec = record("a", [2] * 30 + [15, 15])
        with pytest.raises(ValueError, match="overlaps"):
            transition_samples([rec], masks_for([rec]), n=10)

    def test_onset_near_record_start_is_skipped(self):
        rec = record("a", [2] * 10 + [15, 15] + [2] * 20 + [15, 15] + [2] * 3)
        s = transition_samples([rec], masks_for([rec]), n=2)
        assert s.onsets == 1
        assert s.skips == {"interval outside the response range": 1}

    def test_sparse_interval_is_skipped(self):
        rec = record("a", [2] * 30 + [15, 15], missing=set(range(10, 16)) - {12})
        s = transition_samples([rec], masks_for([rec]), n=0)
        assert s.onsets == 0 and s.skips == {"fewer than two answered weeks": 1}

    def test_near_precursor_more_distinct(self, default_records):
        res = transition_experiment(default_records, Scale.DEPRESSION, (0, 6), repetitions=3, config=FAST)
        assert [r.n for r in res] == [0, 6]
        assert res[0].mean > res[1].mean
        assert res[0].aucs.size == 3

    def test_single_value_grid(self, small_records):
        res = transition_experiment(small_records, Scale.DEPRESSION, (2,), repetitions=2, config=FAST)
        assert len(res) == 1 and res[0].n == 2
