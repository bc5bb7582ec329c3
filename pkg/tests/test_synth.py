import filecmp
import warnings

import numpy as np
import pandas as pd
import pytest

from saphys.dataset import DataQualityWarning, Modality, load_dataset
from saphys.synth import (DesignConfig, SynthConfig, generate_synthetic, question_bank,
                          simulate_responses, synthetic_design)

SMALL = SynthConfig(seed=1, n_participants=2, n_trials=4, trial_s=(40, 50), gap_s=32)


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    return generate_synthetic(SMALL, tmp_path_factory.mktemp("synth") / "a")


def _tree(root):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


class TestDesign:
    def test_shapes_and_labels(self):
        d = synthetic_design(DesignConfig(n_participants=6, n_trials=7))
        assert d.features.values.shape == (42, 6 * 8)
        assert len(d.labels) == 6 * 5
        assert np.isfinite(d.features.values).all()
        prob = d.problem()
        assert prob.X.shape == (30, 48)

    def test_deterministic(self):
        a, b = synthetic_design(DesignConfig(seed=3)), synthetic_design(DesignConfig(seed=3))
        np.testing.assert_array_equal(a.features.values, b.features.values)
        pd.testing.assert_series_equal(a.labels, b.labels)
        c = synthetic_design(DesignConfig(seed=4))
        assert not np.array_equal(a.features.values, c.features.values)

    def test_coupling(self):
        d = synthetic_design(DesignConfig(seed=0))
        names = [str(c) for c in d.features.columns]
        r = lambda j: np.corrcoef(d.features.values[:, j], d.latent[0])[0, 1]
        assert r(names.index("eeg.all.syn0.FullTrial.Raw")) > 0.5
        assert abs(r(names.index("ecg.all.syn0.FullTrial.Raw"))) < 0.15

    def test_invalid(self):
        with pytest.raises(ValueError):
            DesignConfig(coupling=(("eeg", 0, 3, 1.0),))


class TestResponses:
    def test_bank_levels(self, rng):
        bank = question_bank(rng)
        counts = bank["level"].value_counts().sort_index()
        assert counts.max() - counts.min() <= 1
        assert bank["question_id"].is_unique

    def test_six_per_level(self, rng):
        bank = question_bank(rng)
        resp = simulate_responses(rng, bank, np.zeros(3), [2, 3, 4], 1.0)
        assert len(resp) == 3 * 18
        per = pd.Series([(r.trial, r.level) for r in resp]).value_counts()
        assert (per == 6).all()

    def test_gain_drives_accuracy(self, rng):
        bank = question_bank(rng)
        hi = simulate_responses(rng, bank, np.full(200, 2.0), range(200), 2.0)
        lo = simulate_responses(rng, bank, np.full(200, -2.0), range(200), 2.0)
        assert np.mean([r.correct for r in hi]) > np.mean([r.correct for r in lo]) + 0.5


class TestSignals:
    def test_config_validation(self):
        for bad in (dict(n_trials=3), dict(n_participants=1), dict(gap_s=10),
                    dict(trial_s=(50, 40)), dict(coupling={"eeg.beta": 1.0})):
            with pytest.raises(ValueError):
                SynthConfig(**bad)

    def test_layout_and_load(self, small_dataset):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DataQualityWarning)
            ds = load_dataset(small_dataset)
        assert sorted(ds.participants) == ["P01", "P02"]
        p = ds.participants["P01"]
        assert {Modality.ECG, Modality.EEG, Modality.EYE}.issubset(p.traces)
        assert [t for t, _, _ in p.events.trials] == [1, 2, 3, 4]
        for idx, start, end in p.events.trials:
            assert 40 <= end - start <= 50
        truth = pd.read_csv(small_dataset / "truth.csv")
        assert len(truth) == 8

    def test_byte_identical_regeneration(self, small_dataset, tmp_path):
        again = generate_synthetic(SMALL, tmp_path / "b")
        assert _tree(small_dataset) == _tree(again)
        _, mismatch, errors = filecmp.cmpfiles(small_dataset, again, [str(p) for p in _tree(again)],
                                               shallow=False)
        assert mismatch == [] and errors == []
