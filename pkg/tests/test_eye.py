import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from saphys.dataset import EpochKind, EpochWindow
from saphys.eye import detect_fixations, eye_basic_features, rqa

EPOCH = EpochWindow(EpochKind.FullTrial, 0.0, 60.0, 1)


def _lines(cells):
    """Lengths of maximal runs of consecutive True values in a list."""
    out, run = [], 0
    for c in cells:
        if c:
            run += 1
        else:
            if run:
                out.append(run)
            run = 0
    if run:
        out.append(run)
    return out


def _rqa_loops(xy, radius, min_line=2):
    """Loop-by-loop recurrence quantification used as a reference."""
    n = len(xy)
    rec = [[i < j and math.dist(xy[i], xy[j]) <= radius for j in range(n)] for i in range(n)]
    R = sum(map(sum, rec))
    if R == 0:
        return None
    diag = []
    for k in range(1, n):
        diag += [L for L in _lines([rec[i][i + k] for i in range(n - k)]) if L >= min_line]
    horiz = sum(L for i in range(n) for L in _lines(rec[i]) if L >= min_line)
    vert = sum(L for j in range(n) for L in _lines([rec[i][j] for i in range(n)]) if L >= min_line)
    lag = sum(j - i for i in range(n) for j in range(n) if rec[i][j])
    out = {
        "recurrence": 100 * 2 * R / (n * (n - 1)),
        "determinism": 100 * sum(diag) / R,
        "laminarity": 100 * (horiz + vert) / (2 * R),
        "corm": 100 * lag / ((n - 1) * R),
        "mean_line_length": sum(diag) / len(diag) if diag else math.nan,
    }
    if diag:
        counts = [diag.count(v) for v in sorted(set(diag))]
        out["entropy"] = -sum(c / len(diag) * math.log(c / len(diag)) for c in counts)
    else:
        out["entropy"] = math.nan
    return out


class TestBasicFeatures:
    def test_blinks(self):
        blinks = np.column_stack([np.arange(10) * 5.0 + 1, np.full(10, 0.2)])
        f = eye_basic_features(np.empty((0, 4)), blinks, EPOCH)
        assert f["blink_rate"] == pytest.approx(10.0)
        assert f["blink_duration"] == pytest.approx(0.2)
        assert math.isnan(f["fixation_duration"])

    def test_pupil_and_fixations(self):
        t = np.arange(0, 60, 0.01)
        fix = np.array([[1.0, 0.2, 0, 0], [2.0, 0.4, 0, 0], [70.0, 9.0, 0, 0]])
        f = eye_basic_features(fix, np.empty((0, 2)), EPOCH, t, np.full(len(t), 3.5))
        assert f["pupil_diameter"] == pytest.approx(3.5)
        assert f["fixation_duration"] == pytest.approx(0.3)
        assert f["blink_rate"] == 0 and math.isnan(f["blink_duration"])

    def test_pupil_during_blink_excluded(self):
        t = np.arange(0, 60, 0.01)
        p = np.full(len(t), 4.0)
        p[(t >= 10) & (t < 10.5)] = 0.5
        p[(t >= 20) & (t < 20.1)] = 0.0
        f = eye_basic_features(np.empty((0, 4)), np.array([[10.0, 0.5]]), EPOCH, t, p)
        assert f["pupil_diameter"] == pytest.approx(4.0)


class TestRqa:
    def test_single_pair(self):
        m = rqa(np.array([[0, 0], [500, 0], [10, 0], [0, 500]]), 64)
        assert m.recurrence == pytest.approx(100 * 2 / 12, abs=1e-9)
        assert m.corm == pytest.approx(100 * 2 / 3, abs=1e-9)
        assert m.determinism == 0

    def test_identical_fixations(self):
        for n in (2, 3, 5, 10, 30):
            m = rqa(np.zeros((n, 2)), 64)
            assert m.recurrence == 100
            ref = _rqa_loops([(0.0, 0.0)] * n, 64)
            # the longest-lag diagonal holds a single point, which is not a line
            assert m.determinism == pytest.approx(ref["determinism"])
            assert m.determinism == pytest.approx(100 * (1 - 2 / (n * (n - 1))))
            assert m.laminarity == pytest.approx(ref["laminarity"])

    def test_no_recurrence(self):
        m = rqa(np.arange(20).reshape(10, 2) * 100.0, 64)
        assert m.recurrence == 0
        assert all(math.isnan(getattr(m, f)) for f in m.FIELDS if f != "recurrence")

    @given(st.integers(0, 2 ** 32 - 1), st.integers(2, 25), st.floats(10, 300))
    def test_matches_loop_reference(self, seed, n, radius):
        xy = np.random.default_rng(seed).uniform(0, 400, (n, 2))
        m = rqa(xy, radius)
        ref = _rqa_loops([tuple(p) for p in xy], radius)
        if ref is None:
            assert m.recurrence == 0
            return
        for k, v in ref.items():
            got = getattr(m, k)
            assert (math.isnan(got) and math.isnan(v)) or got == pytest.approx(v, abs=1e-9)
        for k in ("recurrence", "determinism", "laminarity", "corm"):
            assert 0 <= getattr(m, k) <= 100
        if np.isfinite(m.mean_line_length):
            assert m.mean_line_length >= 2

    @given(st.integers(0, 2 ** 32 - 1), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(0.1, 10))
    def test_translation_and_scale(self, seed, dx, dy, c):
        xy = np.random.default_rng(seed).integers(0, 8, (15, 2)) * 20.0
        a = rqa(xy, 30.0).as_dict()
        b = rqa((xy + [dx, dy]) * c, 30.0 * c).as_dict()
        for k in a:
            assert (math.isnan(a[k]) and math.isnan(b[k])) or a[k] == pytest.approx(b[k], abs=1e-9)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_monotone_in_radius(self, seed):
        xy = np.random.default_rng(seed).uniform(0, 500, (20, 2))
        recs = [rqa(xy, r).recurrence for r in (10, 30, 60, 120, 250, 800)]
        assert all(b >= a for a, b in zip(recs, recs[1:]))

    @given(st.integers(0, 2 ** 32 - 1))
    def test_reversal(self, seed):
        xy = np.random.default_rng(seed).integers(0, 6, (18, 2)) * 40.0
        a, b = rqa(xy, 50.0), rqa(xy[::-1], 50.0)
        assert a.recurrence == pytest.approx(b.recurrence)
        assert (math.isnan(a.determinism) and math.isnan(b.determinism)) or \
            a.determinism == pytest.approx(b.determinism)


class TestFixationDetection:
    def test_two_dwells(self):
        t = np.arange(0, 1.0, 0.01)
        x = np.where(t < 0.5, 1.0, 10.0)
        fix = detect_fixations(t, x, np.zeros_like(t), max_dispersion=1.0, min_duration=0.1)
        assert len(fix) == 2
        np.testing.assert_allclose(fix[:, 0], [0.0, 0.5], atol=1e-9)
        np.testing.assert_allclose(fix[:, 2], [1.0, 10.0])

    def test_saccade_and_gap(self):
        t = np.arange(0, 2.0, 0.004)
        x = np.where(t < 0.8, 5.0, np.where(t < 0.85, 5 + (t - 0.8) * 200, 15.0))
        y = np.zeros_like(t)
        x[(t > 1.4) & (t < 1.45)] = np.nan
        fix = detect_fixations(t, x, y, max_dispersion=1.0, min_duration=0.1)
        assert len(fix) == 3
        # the first saccade sample (x = 5.8) is still within the dispersion limit
        assert fix[0, 0] == 0.0 and fix[0, 1] == pytest.approx(0.808)
        np.testing.assert_allclose(fix[:, 2], [5.0, 15.0, 15.0], atol=0.5)
        assert (fix[:, 1] >= 0.1 - 1e-9).all()

    def test_too_short_dwell_ignored(self):
        t = np.arange(0, 0.3, 0.01)
        x = np.where(t < 0.05, 0.0, np.arange(len(t)) * 5.0)
        assert len(detect_fixations(t, x, np.zeros_like(t))) == 0
