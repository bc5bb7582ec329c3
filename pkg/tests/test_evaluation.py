import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from saphys.dataset import EpochKind, FeatureKey, FeatureMatrix
from saphys.modeling.evaluation import (FoldModel, Problem, Scaler, ablation, fit_fold,
                                        fusion_weights, metrics, outer_cv, outer_folds,
                                        sensor_fusion, shuffled_null)
from saphys.modeling.selection import LassoConfig, LinearModel

CFG = LassoConfig(runs=3)


def small_problem(seed=0, n_part=8, n_trial=8, signal=1.0):
    g = np.random.default_rng(seed)
    n = n_part * n_trial
    sensors = np.repeat(["ecg", "eeg", "eye"], 4)
    X = g.standard_normal((n, 12)) + np.repeat(g.normal(0, 0.3, (n_part, 12)), n_trial, axis=0)
    y = signal * X[:, 4] + 0.5 * g.standard_normal(n)
    pids = np.repeat([f"P{i:02d}" for i in range(n_part)], n_trial)
    tids = np.tile(np.arange(2, n_trial + 2), n_part)
    names = [f"{s}.c{j}.f.FullTrial.Raw" for j, s in enumerate(sensors)]
    return Problem(X, y, pids, tids, names, sensors)


class TestMetrics:
    def test_hand_fixture(self):
        q2, mae = metrics([0, 1, 2], [0, 0, 3])
        assert q2 == pytest.approx(0.0)
        assert mae == pytest.approx(2 / 3)

    def test_perfect_and_mean(self, rng):
        y = rng.standard_normal(20)
        assert metrics(y, y) == (1.0, 0.0)
        q2, mae = metrics(y, np.full(20, y.mean()))
        assert q2 == pytest.approx(0.0, abs=1e-12)
        assert mae == pytest.approx(np.mean(np.abs(y - y.mean())) / y.std(ddof=1))

    def test_constant_truth(self):
        with pytest.raises(ValueError, match="zero standard deviation"):
            metrics([1, 1, 1], [1, 2, 3])


class TestFolds:
    def test_every_participant_in_every_fold(self):
        pids = np.repeat(["a", "b", "c"], [10, 7, 5])
        f = outer_folds(pids, 5, seed=3)
        for p in "abc":
            assert set(f[pids == p]) == set(range(5))
        sizes = np.bincount(f)
        assert sizes.max() - sizes.min() <= 1

    def test_seeded(self):
        pids = np.repeat(["a", "b"], 10)
        np.testing.assert_array_equal(outer_folds(pids, 5, (1, 2)), outer_folds(pids, 5, (1, 2)))
        assert not np.array_equal(outer_folds(pids, 5, 1), outer_folds(pids, 5, 2))


class TestClamp:
    def test_prediction_clamped(self):
        lm = LinearModel((0,), 0.0, np.array([1.0]), 0.5, 0.4, 0.4, True)
        fm = FoldModel(0, Scaler(np.zeros(1), np.ones(1), np.array([0])), lm, np.arange(3),
                       np.arange(0), (-2.0, 2.0), "x")
        assert fm.predict(np.array([[3.1], [-7.0], [0.5]])).tolist() == [2.0, -2.0, 0.5]

    def test_outer_predictions_in_training_range(self):
        prob = small_problem()
        res = outer_cv(prob, CFG, seed=0)
        for fm in res.fold_models:
            if fm.converged:
                lo, hi = fm.y_range
                p = res.predictions[fm.test]
                assert (p >= lo).all() and (p <= hi).all()
                assert lo == prob.y[fm.train].min() and hi == prob.y[fm.train].max()


class TestOuterCv:
    def test_planted_signal(self):
        res = outer_cv(small_problem(), CFG, seed=0)
        assert res.report.cr == 1.0
        assert res.report.q2 > 0.3
        assert all(d["n_predictors"] >= 1 for d in res.report.folds)
        assert all(4 in fm.columns for fm in res.fold_models)

    def test_held_out_labels_never_used(self):
        prob = small_problem(seed=4)
        base = outer_cv(prob, CFG, seed=7)
        for f in range(5):
            y = prob.y.copy()
            test = base.fold_models[f].test
            y[test] = np.random.default_rng(f).normal(10, 5, len(test))
            other = fit_fold(prob.with_labels(y), base.fold_models[f].train, CFG, [7, f], f, test)
            assert other.model_hash() == base.fold_models[f].model_hash()
            assert other.fingerprint == base.fold_models[f].fingerprint

    def test_deterministic(self):
        prob = small_problem(seed=5)
        a, b = outer_cv(prob, CFG, seed=(1, 2)), outer_cv(prob, CFG, seed=(1, 2))
        assert [fm.model_hash() for fm in a.fold_models] == [fm.model_hash() for fm in b.fold_models]
        np.testing.assert_array_equal(a.predictions, b.predictions)


class TestNull:
    def test_identity_and_multiset(self):
        prob = small_problem(seed=1)
        ref = outer_cv(prob, CFG, seed=3).report
        nl = shuffled_null(prob, CFG, n_shuffles=2, seed=3, reference=ref, include_identity=True)
        assert nl.reports[0].q2 == ref.q2 and nl.reports[0].cr == ref.cr
        for perm in nl.permutations:
            np.testing.assert_array_equal(np.sort(prob.y[perm]), np.sort(prob.y))
        assert nl.n_exceeding >= 1

    def test_parallel_matches_serial(self):
        prob = small_problem(seed=2)
        a = shuffled_null(prob, CFG, n_shuffles=2, seed=9)
        b = shuffled_null(prob, CFG, n_shuffles=2, seed=9, n_jobs=2)
        np.testing.assert_array_equal(a.q2, b.q2)
        assert [r.cr for r in a.reports] == [r.cr for r in b.reports]


class TestFusion:
    def test_weight_examples(self):
        assert fusion_weights({"a": 0.3, "b": 0.1}) == {"a": pytest.approx(0.75), "b": pytest.approx(0.25)}
        assert fusion_weights({"a": 0.4, "b": None}) == {"a": 1.0, "b": 0.0}
        assert fusion_weights({"a": None, "b": None}) == {"a": 0.0, "b": 0.0}

    @given(st.dictionaries(st.sampled_from(["ecg", "eeg", "eye", "eda"]),
                           st.one_of(st.none(), st.floats(0.0, 1.0)), min_size=1))
    def test_weights_normalized(self, r2):
        w = fusion_weights(r2)
        assert all(v >= 0 for v in w.values())
        assert all(w[s] == 0 for s, v in r2.items() if v is None)
        if any(v is not None for v in r2.values()):
            assert sum(w.values()) == pytest.approx(1.0)

    def test_fusion_runs(self):
        res = sensor_fusion(small_problem(), CFG, seed=0)
        assert res.report.cr == 1.0
        for ff in res.folds:
            assert sum(ff.weights.values()) == pytest.approx(1.0)
            assert ff.weights["eeg"] > 0


class TestAblation:
    def test_each_sensor_once(self):
        res = ablation(small_problem(), CFG, seed=0)
        assert sorted(res) == ["all", "ecg", "eeg", "eye"]
        assert res["eeg"].q2 < res["all"].q2


class TestProblem:
    def test_from_frames_alignment(self):
        cols = [FeatureKey("eeg", "Fz", "alpha", EpochKind.FullTrial), FeatureKey("ecg", "all", "rmssd", EpochKind.FullTrial)]
        fm = FeatureMatrix([("A", 1), ("A", 2), ("B", 1)], cols, [[1, 2], [3, 4], [5, 6]])
        lab = pd.Series([9.0, 8.0], index=pd.MultiIndex.from_tuples([("B", 1), ("A", 2)]))
        prob = Problem.from_frames(fm, lab)
        np.testing.assert_array_equal(prob.X, [[5, 6], [3, 4]])
        np.testing.assert_array_equal(prob.y, [9, 8])
        assert prob.sensors.tolist() == ["eeg", "ecg"]

    def test_missing_values_rejected(self):
        with pytest.raises(ValueError, match="impute"):
            Problem(np.array([[np.nan]]), [1.0], ["a"], [1], ["x"], ["eeg"])
