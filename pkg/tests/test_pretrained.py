import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from saphys.dataset import FeatureKey, FeatureMatrix
from saphys.modeling.pretrained import (TABLE_IDS, MissingFeaturesError, ModelTable,
                                        load_pretrained, pretrained_predict)

INTERCEPTS = {"L1": 4.73, "L2": 8.82, "L3": 16.7, "Total": 40.02}


def zeros(table):
    return dict.fromkeys(load_pretrained(table).keys, 0.0)


@pytest.mark.parametrize("table", TABLE_IDS)
def test_intercept_on_zero_vector(table):
    assert pretrained_predict(zeros(table), table) == INTERCEPTS[table]


def test_total_single_term():
    x = zeros("Total")
    x["rsp.all.rate.FullTrial.Standardized"] = 1.0
    assert pretrained_predict(x, "Total") == pytest.approx(39.73, abs=1e-12)


def test_total_leading_terms():
    t = load_pretrained("Total")
    assert [(str(k), c) for k, c in t.terms[:3]] == [
        ("rsp.all.rate.FullTrial.Standardized", -0.29),
        ("eye.all.pupil_diameter.Final20s.Raw", 0.31),
        ("eye.all.determinism.FullTrial.Raw", -0.01)]


@pytest.mark.parametrize("table", TABLE_IDS)
def test_keys_round_trip(table):
    for k, _ in load_pretrained(table).terms:
        assert FeatureKey.parse(str(k)) == k


@pytest.mark.parametrize("table", TABLE_IDS)
@given(a=st.floats(-50, 50), seed=st.integers(0, 2**32 - 1))
def test_linear(table, a, seed):
    m = load_pretrained(table)
    x = dict(zip(m.keys, np.random.default_rng(seed).normal(0, 3, len(m.keys))))
    f0 = pretrained_predict(zeros(table), table)
    fx = pretrained_predict(x, table)
    fax = pretrained_predict({k: a * v for k, v in x.items()}, table)
    assert fax - f0 == pytest.approx(a * (fx - f0), rel=1e-9, abs=1e-9)


def test_missing_keys_listed():
    x = zeros("L2")
    gone = sorted(x)[:2]
    for k in gone:
        del x[k]
    with pytest.raises(MissingFeaturesError) as err:
        pretrained_predict(x, "L2")
    assert sorted(err.value.missing) == gone
    assert all(k in str(err.value) for k in gone)


def test_table_id_case_and_unknown():
    assert load_pretrained("total").terms == load_pretrained("TOTAL").terms
    with pytest.raises(ValueError, match="unknown model table"):
        load_pretrained("L4")


def test_featurekey_objects_accepted():
    m = load_pretrained("L1")
    x = {k: 1.0 for k, _ in m.terms}
    assert pretrained_predict(x, "L1") == pytest.approx(m.intercept + sum(c for _, c in m.terms))


def test_matrix_and_file_round_trip(tmp_path):
    m = load_pretrained("L3")
    cols = [k for k, _ in m.terms][::-1] + [FeatureKey.parse("ecg.all.rmssd.FullTrial.Raw")]
    X = np.random.default_rng(0).standard_normal((4, len(cols)))
    fm = FeatureMatrix([("A", i) for i in range(4)], cols, X)
    rows = [m.predict(dict(zip(cols, r))) for r in X]
    np.testing.assert_allclose(m.predict_matrix(fm), rows, rtol=1e-12)
    m.save(tmp_path / "m.json")
    back = ModelTable.load(tmp_path / "m.json")
    assert back.to_dict() == m.to_dict()
