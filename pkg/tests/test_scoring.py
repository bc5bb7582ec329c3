import math
import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from saphys.dataset import DataQualityWarning, Response
from saphys.scoring import (adjusted_level_score, labels, moving_average_3, question_difficulty,
                            read_scores, score_table, write_scores, zscore)
from saphys.synth import question_bank, simulate_responses


def _r(q, ok, level=1, trial=1):
    return Response(trial, q, level, ok)


class TestDifficulty:
    def test_examples(self):
        resp = [_r("a", True), _r("a", True), _r("a", True), _r("a", False), _r("b", True)]
        p = question_difficulty(resp, bank=["a", "b", "c"])
        assert p["a"] == 0.75 and p["b"] == 1.0
        assert math.isnan(p["c"])


class TestAdjusted:
    def test_single_answers(self):
        assert adjusted_level_score([_r("a", True)], {"a": 0.8})[1] == pytest.approx(0.2)
        assert adjusted_level_score([_r("a", False)], {"a": 0.8})[1] == pytest.approx(-0.8)

    def test_six_questions(self):
        resp = [_r(f"q{i}", i < 4, level=2) for i in range(6)]
        score = adjusted_level_score(resp, {f"q{i}": 0.5 for i in range(6)})
        assert score == {1: 0.0, 2: pytest.approx(1.0), 3: 0.0}

    def test_unknown_question_skipped(self):
        with pytest.warns(DataQualityWarning, match="skipped"):
            score = adjusted_level_score([_r("a", True), _r("z", True)], {"a": 0.5})
        assert score[1] == 0.5

    @given(st.lists(st.tuples(st.sampled_from("abcdef"), st.booleans(), st.sampled_from([1, 2, 3])),
                    min_size=1, max_size=60))
    def test_zero_sum(self, answers):
        resp = [_r(q, ok, lvl) for q, ok, lvl in answers]
        p = question_difficulty(resp)
        for q in p:
            total = sum((1 - p[q]) if r.correct else -p[q] for r in resp if r.question_id == q)
            assert total == pytest.approx(0.0, abs=1e-12)
        # and summed over levels, the whole bank nets to zero
        assert sum(adjusted_level_score(resp, p).values()) == pytest.approx(0.0, abs=1e-9)

    @given(st.lists(st.booleans(), min_size=6, max_size=6), st.lists(st.floats(0, 1), min_size=6,
                                                                      max_size=6), st.integers(0, 5))
    def test_monotone(self, correct, ps, k):
        if correct[k]:
            return
        p = {f"q{i}": v for i, v in enumerate(ps)}
        before = adjusted_level_score([_r(f"q{i}", c) for i, c in enumerate(correct)], p)[1]
        correct = list(correct)
        correct[k] = True
        after = adjusted_level_score([_r(f"q{i}", c) for i, c in enumerate(correct)], p)[1]
        assert after == pytest.approx(before + 1.0)


class TestMovingAverage:
    def test_examples(self):
        np.testing.assert_allclose(moving_average_3([1, 2, 3, 4, 5])[1:-1], [2, 3, 4])
        out = moving_average_3([1, np.nan, 3, 5])
        assert math.isnan(out[0]) and math.isnan(out[-1])
        np.testing.assert_allclose(out[1:3], [2.0, 4.0])

    def test_short_sequence_dropped(self):
        with pytest.warns(DataQualityWarning):
            assert np.isnan(moving_average_3([1.0, 2.0])).all()

    @given(st.lists(st.floats(-100, 100), min_size=3, max_size=30), st.floats(-100, 100))
    def test_constant_shift(self, vals, c):
        a = moving_average_3(vals)
        b = moving_average_3(np.array(vals) + c)
        np.testing.assert_allclose(b[1:-1], a[1:-1] + c, atol=1e-9)
        np.testing.assert_allclose(moving_average_3([c] * len(vals))[1:-1], c, atol=1e-12)


class TestTable:
    def _responses(self, n_part=31, n_trials=12, seed=0):
        g = np.random.default_rng(seed)
        bank = question_bank(g)
        return {f"P{i:02d}": simulate_responses(g, bank, g.standard_normal(n_trials),
                                                range(1, n_trials + 1), 1.0)
                for i in range(n_part)}

    def test_retained_count_and_columns(self):
        table = score_table(self._responses())
        assert len(table) == 31 * 12
        assert int(table["retained"].sum()) == 310
        for lvl in (1, 2, 3):
            assert table[f"level{lvl}_raw"].between(0, 6).all()
            assert abs(table[f"level{lvl}_std"].mean()) < 1e-9
        total = table["level1_std"] + table["level2_std"] + table["level3_std"]
        np.testing.assert_allclose(table["total"], total, atol=1e-12)
        kept = table[table["retained"]]
        assert not kept["trial"].isin([1, 12]).any()
        assert len(labels(table, "total")) == 310 and len(labels(table, 2)) == 310

    def test_adjusted_total_option(self):
        table = score_table(self._responses(5, 6), total_of="adjusted")
        adj = table["level1_adjusted"] + table["level2_adjusted"] + table["level3_adjusted"]
        np.testing.assert_allclose(table["total"], adj, atol=1e-12)

    def test_missing_trial_listed(self):
        resp = self._responses(3, 6)
        resp["P00"] = [r for r in resp["P00"] if r.trial != 3]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DataQualityWarning)
            table = score_table(resp, {p: range(1, 7) for p in resp})
        row = table[(table["participant"] == "P00") & (table["trial"] == 3)].iloc[0]
        assert math.isnan(row["level1_raw"])
        assert table[table["participant"] == "P00"]["retained"].sum() == 4

    def test_zscore_examples(self):
        np.testing.assert_allclose(zscore([1, 2, 3]), [-1, 0, 1])
        with pytest.warns(DataQualityWarning):
            assert (zscore([2, 2, 2]) == 0).all()

    def test_round_trip(self, tmp_path):
        table = score_table(self._responses(4, 6))
        write_scores(tmp_path / "s.csv", table)
        back = read_scores(tmp_path / "s.csv")
        pd.testing.assert_frame_equal(back, table, check_dtype=False, rtol=0, atol=0)
