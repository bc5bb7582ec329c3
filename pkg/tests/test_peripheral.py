import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from saphys.dataset import DataQualityWarning, EpochKind, EpochWindow
from saphys.peripheral import (bateman, detect_r_peaks, ecg_clean, eda_clean, eda_decompose,
                               eda_features, hrv_features, rsp_clean, rsp_features)


def _ecg(beats, fs=250.0, duration=60.0, noise=0.02, seed=0):
    t = np.arange(int(duration * fs)) / fs
    x = np.zeros_like(t)
    for b in beats:
        x += np.exp(-0.5 * ((t - b) / 0.01) ** 2)
        x += 0.15 * np.exp(-0.5 * ((t - b - 0.25) / 0.04) ** 2)  # T wave
    x += 0.3 * np.sin(2 * np.pi * 0.2 * t)  # baseline wander
    return x + np.random.default_rng(seed).normal(0, noise, len(t)), fs


class TestRPeaks:
    @pytest.mark.parametrize("spacing", [1.0, 0.5])
    def test_recovers_known_beats(self, spacing):
        truth = np.arange(1.0, 59.0, spacing)
        x, fs = _ecg(truth)
        found = detect_r_peaks(ecg_clean(x, fs), fs)
        assert len(found) == len(truth)
        assert np.abs(found - truth).max() <= 0.020

    def test_flat_signal(self):
        found = detect_r_peaks(np.zeros(5000), 250.0)
        assert len(found) == 0
        h = hrv_features(found)
        assert all(math.isnan(v) for v in h.as_dict().values())


class TestHrv:
    def test_constant_rhythm(self):
        h = hrv_features(np.arange(0, 30, 1.0))
        assert h.heart_rate == pytest.approx(60.0)
        assert (h.rmssd, h.sdsd, h.pnn50) == (0.0, 0.0, 0.0)

    def test_alternating_intervals(self):
        beats = np.concatenate([[0], np.cumsum(np.tile([0.9, 1.1], 15))])
        h = hrv_features(beats)
        assert h.rmssd == pytest.approx(200.0, abs=1e-9)
        assert h.pnn50 == 100.0
        assert h.heart_rate == pytest.approx(60.0)
        assert hrv_features(beats, pnn50_below=True).pnn50 == 0.0

    def test_random_intervals_match_direct_computation(self, rng):
        nn = rng.uniform(0.6, 1.2, 50)
        beats = np.concatenate([[0.0], np.cumsum(nn)])
        d = [(nn[i + 1] - nn[i]) * 1000 for i in range(49)]
        mean_d = sum(d) / 49
        h = hrv_features(beats)
        assert h.heart_rate == pytest.approx(60 / (sum(nn) / 50), rel=1e-12)
        assert h.rmssd == pytest.approx(math.sqrt(sum(v * v for v in d) / 49), rel=1e-9)
        assert h.sdsd == pytest.approx(math.sqrt(sum((v - mean_d) ** 2 for v in d) / 48), rel=1e-9)
        assert h.pnn50 == pytest.approx(100 * sum(abs(v) > 50 for v in d) / 49)

    def test_too_few_beats(self):
        h = hrv_features([1.0, 2.0])
        assert h.heart_rate == pytest.approx(60.0)
        assert math.isnan(h.rmssd) and math.isnan(h.pnn50)

    def test_epoch_restriction(self):
        ep = EpochWindow(EpochKind.FullTrial, 10.0, 20.0, 1)
        h = hrv_features(np.arange(0, 30, 0.5), ep)
        assert h.heart_rate == pytest.approx(120.0)

    @given(st.lists(st.floats(0.3, 2.0), min_size=2, max_size=80))
    def test_rmssd_identity(self, nn):
        nn = np.array(nn)
        h = hrv_features(np.concatenate([[0.0], np.cumsum(nn)]))
        sd = np.diff(np.diff(np.concatenate([[0.0], np.cumsum(nn)]))) * 1000
        assert h.rmssd >= 0 and (len(sd) < 2 or h.sdsd >= 0)
        assert h.rmssd ** 2 == pytest.approx(np.mean(sd ** 2), rel=1e-9, abs=1e-9)
        assert 0 <= h.pnn50 <= 100


class TestRsp:
    def test_sinusoid(self):
        fs = 25.0
        t = np.arange(int(60 * fs)) / fs
        r = rsp_features(np.sin(2 * np.pi * 0.25 * t), fs, 60.0)
        assert r.rate == pytest.approx(15.0, rel=1e-3)
        assert r.median_amplitude == pytest.approx(1.0, abs=1e-3)
        assert r.tidal_proxy == pytest.approx(2.0, abs=2e-3)

    def test_constant(self):
        with pytest.warns(DataQualityWarning):
            r = rsp_features(np.ones(600), 10.0)
        assert r.rate == 0.0

    def test_amplitude_modulated(self):
        fs = 20.0
        t = np.arange(int(40 * fs)) / fs
        heights = [1.0, 2.0, 0.5, 1.5, 3.0, 1.0, 2.5, 0.8, 1.2, 2.2]
        x = np.zeros_like(t)
        for k, h in enumerate(heights):
            x += h * np.exp(-0.5 * ((t - 2 - 4 * k) / 0.5) ** 2)
        r = rsp_features(x, fs, 40.0)
        assert r.median_amplitude == pytest.approx(np.median(heights), rel=1e-3)
        assert r.rate == pytest.approx(15.0, rel=1e-6)

    def test_clean_then_features(self):
        fs = 25.0
        t = np.arange(int(120 * fs)) / fs
        x = rsp_clean(np.sin(2 * np.pi * 0.3 * t) + 0.5 * t / 120, fs)
        assert rsp_features(x[500:-500], fs).rate == pytest.approx(18.0, rel=0.01)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_minute_ventilation_exact(self, seed):
        g = np.random.default_rng(seed)
        fs = 10.0
        t = np.arange(300) / fs
        x = np.sin(2 * np.pi * g.uniform(0.15, 0.5) * t) + 0.2 * g.standard_normal(300)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DataQualityWarning)
            r = rsp_features(x, fs)
        assert r.minute_vent_proxy == r.rate * r.tidal_proxy
        assert r.rate >= 0


def _bump(fs, n, onset_s, area):
    """Driver impulse of the given area convolved with a unit-area Bateman response."""
    t = np.arange(n) / fs - onset_s
    out = np.zeros(n)
    m = t >= 0
    out[m] = area * (np.exp(-t[m] / 3.75) - np.exp(-t[m] / 1.0)) / 2.75
    return out


class TestEda:
    fs = 4.0

    def test_out_of_range_sample(self):
        x = np.linspace(2, 3, 400)
        x[200] = 45.0
        c = eda_clean(x, self.fs)
        assert c.rejected[200]
        assert c.signal[200] == pytest.approx(x[199] + (x[201] - x[199]) / 2, abs=1e-6)

    def test_step_rejected(self):
        x = np.r_[np.full(200, 2.0), np.full(200, 6.0)]
        c = eda_clean(x, self.fs)
        assert c.rejected[198:202].all()

    def test_slow_drift_passthrough(self):
        t = np.arange(2400) / self.fs
        x = 3 + 0.5 * np.sin(2 * np.pi * t / 300)
        c = eda_clean(x, self.fs)
        assert not c.rejected.any()
        assert np.abs(c.signal - x).max() < 1e-3
        again = eda_clean(c.signal, self.fs)
        np.testing.assert_allclose(again.signal, c.signal, atol=1e-6)

    def test_bateman_unit_area(self):
        k = bateman(8.0)
        assert k.sum() / 8.0 == pytest.approx(1.0)
        assert k[0] == 0 and (k[1:] > 0).all()

    def test_constant(self):
        dec = eda_decompose(np.full(400, 5.0), self.fs)
        assert np.abs(dec.tonic - 5).max() <= 0.05
        assert np.abs(dec.phasic).max() <= 0.05
        assert eda_features(dec).scr_count == 0

    def test_single_bump(self):
        n = 480
        bump = _bump(self.fs, n, 40.0, 0.5)
        dec = eda_decompose(3.0 + bump, self.fs)
        f = eda_features(dec)
        assert f.scr_count == 1
        assert f.scr_mean_amplitude == pytest.approx(bump.max(), rel=0.1)
        assert dec.scrs[0].onset == pytest.approx(40.0, abs=1.0)

    def test_two_bumps(self):
        n = 480
        b1, b2 = _bump(self.fs, n, 40.0, 0.5), _bump(self.fs, n, 50.0, 0.8)
        f = eda_features(eda_decompose(3.0 + b1 + b2, self.fs))
        assert f.scr_count == 2
        assert f.scr_sum_amplitude == pytest.approx(b1.max() + b2.max(), rel=0.1)

    def test_reconstruction_and_invariants(self, rng):
        n = 960
        x = 2 + 0.002 * np.arange(n) / self.fs
        for onset in rng.uniform(20, 220, 6):
            x = x + _bump(self.fs, n, onset, rng.uniform(0.1, 1.0))
        dec = eda_decompose(x, self.fs)
        rms = np.sqrt(np.mean((dec.tonic + dec.phasic - x) ** 2))
        assert rms <= 0.05 * x.std()
        f = eda_features(dec, EpochWindow(EpochKind.FullTrial, 30.0, 200.0, 1))
        assert f.tonic_min <= f.tonic_mean <= f.tonic_max
        assert f.scr_auc >= 0 and f.scr_count >= 0
        if f.scr_count >= 1:
            assert f.scr_sum_amplitude >= f.scr_mean_amplitude
