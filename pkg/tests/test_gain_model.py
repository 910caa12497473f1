import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metaens.errors import ChecksumError, DataError, FeatureLayoutError, FormatVersionError
from metaens.features import N_STATE, StateFeatures
from metaens.forest import constant_forest
from metaens.gain_model import TwoPartGainModel, load_model, save_model, train_two_part


def _const_model(c, r, **kw):
    return TwoPartGainModel(constant_forest(c, N_STATE, "mean_prob", 0),
                            constant_forest(r, N_STATE, "median_leaf", 1), **kw)


@pytest.fixture(scope="module")
def trained():
    rng = np.random.default_rng(0)
    X = rng.random((400, N_STATE))
    g = np.where(X[:, 0] > 0.6, 0.1 * X[:, 1], -0.05 * X[:, 2])
    cls, reg = train_two_part(X, g, seed=7, n_cls_trees=30, n_reg_trees=30)
    model = TwoPartGainModel(cls, reg, {"KNN": 0.01, "LOF": 0.0}, {"KNN": 10, "LOF": 3},
                             meta_perf={"knn_k=5_method=largest": 0.4}, config={"seed": 7})
    return model, X, g


def test_multiplicative_examples():
    x = np.zeros(N_STATE)
    assert _const_model(0.0, 0.5).predict_gain(x) == 0.0
    assert _const_model(1.0, 0.07).predict_gain(x) == 0.07


def test_predictions_bounded_by_training_gains(trained):
    model, X, g = trained
    Xt = np.random.default_rng(3).random((1000, N_STATE)) * 2 - 0.5
    p = model.predict_gains(Xt)
    assert (p >= 0).all() and (p <= g.max()).all()
    assert p[Xt[:, 0] > 0.7].mean() > p[Xt[:, 0] < 0.5].mean()


@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=60))
@settings(max_examples=50, deadline=None)
def test_non_negative_for_any_gain_set(gains):
    X = np.tile(np.linspace(0, 1, len(gains))[:, None], (1, N_STATE))
    cls, reg = train_two_part(X, gains, seed=0, n_cls_trees=3, n_reg_trees=3)
    out = TwoPartGainModel(cls, reg).predict_gains(np.random.default_rng(0).random((20, N_STATE)))
    assert (out >= 0).all()


def test_degenerate_sample_sets():
    X = np.random.default_rng(0).random((5, N_STATE))
    cls, reg = train_two_part(X, [-0.1] * 5, n_cls_trees=3, n_reg_trees=3)
    assert TwoPartGainModel(cls, reg).predict_gains(X).tolist() == [0.0] * 5
    cls, reg = train_two_part(X, [0.2] * 5, n_cls_trees=3, n_reg_trees=3)
    assert TwoPartGainModel(cls, reg).predict_gains(X).tolist() == [0.2] * 5
    with pytest.raises(DataError):
        train_two_part(X, [0.1] * 4)


def test_round_trip_is_bit_identical(tmp_path, trained):
    model, _, _ = trained
    Xt = np.random.default_rng(5).random((1000, N_STATE))
    for name in ("m.json", "m.json.gz"):
        path = save_model(model, tmp_path / name)
        back = load_model(path)
        assert back.predict_gains(Xt).tobytes() == model.predict_gains(Xt).tobytes()
        assert back.family_risk == model.family_risk and back.meta_perf == model.meta_perf
        assert back.config == model.config


def test_save_is_reproducible(tmp_path, trained):
    model, _, _ = trained
    a = save_model(model, tmp_path / "a.json.gz").read_bytes()
    b = save_model(model, tmp_path / "b.json.gz").read_bytes()
    assert a == b


def test_truncated_and_tampered(tmp_path, trained):
    model, _, _ = trained
    path = save_model(model, tmp_path / "m.json")
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(ChecksumError):
        load_model(path)
    doc = json.loads(data)
    doc["family_risk"]["KNN"] = 0.5
    path.write_text(json.dumps(doc))
    with pytest.raises(ChecksumError, match="checksum"):
        load_model(path)
    gz = tmp_path / "m.json.gz"
    gz.write_bytes(b"\x1f\x8b garbage")
    with pytest.raises(ChecksumError):
        load_model(gz)


def test_version_and_layout_errors(tmp_path, trained):
    model, _, _ = trained
    path = save_model(model, tmp_path / "m.json")
    doc = json.loads(path.read_bytes())
    doc["format_version"] = 0
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatVersionError):
        load_model(path)
    with pytest.raises(DataError):
        load_model(tmp_path / "missing.json")
    z = np.zeros(20)
    old = StateFeatures(z, z, z, 1, layout_version=0)
    with pytest.raises(FeatureLayoutError):
        model.predict_gain(old)
    with pytest.raises(FeatureLayoutError):
        model.predict_gains(np.zeros((2, 60)))


def test_risk_lookup(trained):
    model, _, _ = trained
    assert model.risk("KNN") == 0.01 and model.risk("IFOREST") == 0.0
