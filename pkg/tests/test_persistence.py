import json

import numpy as np
import pytest

from rppg_depression.errors import CorruptModelFile, UnsupportedFormatVersion
from rppg_depression.persistence import load_model, model_text, save_model
from rppg_depression.regression.forest import ForestConfig, train_rf
from rppg_depression.regression.mlp import MlpConfig, train_mlp
from rppg_depression.regression.model import predict


def data(seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(80, 4))
    return X, X[:, 0] * 5 + rng.normal(size=80)


@pytest.fixture(params=["rf", "mlp"])
def model(request):
    X, y = data()
    if request.param == "rf":
        return train_rf(X, y, ForestConfig(n_estimators=10, seed=2), registry_hash="r1")
    return train_mlp(X, y, MlpConfig(hidden_sizes=(8, 6, 4), max_epochs=20, seed=2), registry_hash="r1")


def test_round_trip_is_bit_exact(model, tmp_path):
    X, _ = data(1)
    path = tmp_path / "m.json"
    save_model(model, path)
    back = load_model(path)
    assert back.model_type == model.model_type and back.registry_hash == "r1"
    assert np.array_equal(predict(back, X), predict(model, X))
    assert model_text(back) == model_text(model)


def test_header_fields(model):
    doc = json.loads(model_text(model))
    assert doc["format_version"] == 1
    assert doc["seed"] == 2
    assert doc["tool"].startswith("rppg_depression ")
    assert doc["config"] == model.config


def test_truncated_file(model, tmp_path):
    path = tmp_path / "m.json"
    text = model_text(model)
    path.write_text(text[: len(text) // 2])
    with pytest.raises(CorruptModelFile):
        load_model(path)


def test_tampered_array(model, tmp_path):
    doc = json.loads(model_text(model))
    name = sorted(doc["arrays"])[0]
    data_b64 = doc["arrays"][name]["data"]
    doc["arrays"][name]["data"] = ("A" if data_b64[0] != "A" else "B") + data_b64[1:]
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(CorruptModelFile):
        load_model(path)


def test_future_format_version(model, tmp_path):
    doc = json.loads(model_text(model))
    doc["format_version"] = 99
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(UnsupportedFormatVersion):
        load_model(path)


def test_missing_file(tmp_path):
    with pytest.raises(CorruptModelFile):
        load_model(tmp_path / "absent.json")


def test_atomic_save_leaves_no_temp_files(model, tmp_path):
    save_model(model, tmp_path / "m.json")
    save_model(model, tmp_path / "m.json")
    assert [p.name for p in tmp_path.iterdir()] == ["m.json"]
