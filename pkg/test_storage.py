import json
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from mfgpc.datagen import generate_synthetic
from mfgpc.errors import InputError
from mfgpc.laplace import FittedModel, fit_mode, predict_latent
from mfgpc.models import RbfParams, SfDataset, SynthesisSpec
from mfgpc.single_fidelity import SfModel, sf_fit, sf_predict_latent
from mfgpc.storage import (
    load_ground_truth,
    load_model,
    load_run_config,
    provenance,
    read_table,
    save_ground_truth,
    save_model,
    write_table,
)


def test_provenance_has_no_timestamps():
    info = provenance("train", {"out": Path("m.json"), "restarts": 3, "data": "d.csv"}, seed=4)
    assert info["seed"] == 4
    assert info["command"] == "train"
    assert info["tool"].startswith("mfgpc ")
    assert list(info["flags"]) == ["data", "out", "restarts"]
    assert info["flags"]["out"] == "m.json"
    json.dumps(info)


def test_model_round_trip(small_data, small_hyper, tmp_path, rng):
    model = fit_mode(small_data, small_hyper)
    path = tmp_path / "model.json"
    save_model(model, path, provenance("train", {}, 0))
    loaded = load_model(path)
    assert isinstance(loaded, FittedModel)
    assert loaded.hyper == model.hyper
    assert loaded.newton_iters == model.newton_iters
    assert abs(loaded.log_marginal - model.log_marginal) < 1e-10
    X_star = rng.uniform(size=(12, 2))
    assert_allclose(predict_latent(loaded, X_star), predict_latent(model, X_star), rtol=0, atol=1e-12)


def test_saving_twice_gives_identical_bytes(small_data, small_hyper, tmp_path):
    model = fit_mode(small_data, small_hyper)
    save_model(model, tmp_path / "a.json", provenance("train", {"seed": 1}, 1))
    save_model(model, tmp_path / "b.json", provenance("train", {"seed": 1}, 1))
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_single_fidelity_model_round_trip(rng, tmp_path):
    X = rng.uniform(size=(15, 2))
    y = (X[:, 0] > 0.5).astype(int)
    y[:2] = [0, 1]
    model = sf_fit(SfDataset(X, y), RbfParams(s=0.0, sigma=0.4))
    save_model(model, tmp_path / "sf.json")
    loaded = load_model(tmp_path / "sf.json")
    assert isinstance(loaded, SfModel)
    assert_allclose(sf_predict_latent(loaded, X), sf_predict_latent(model, X), atol=1e-12)


def test_tampered_training_data_is_rejected(small_data, small_hyper, tmp_path):
    path = tmp_path / "model.json"
    save_model(fit_mode(small_data, small_hyper), path)
    document = json.loads(path.read_text())
    document["y_H"][0] = 1 - document["y_H"][0]
    path.write_text(json.dumps(document))
    with pytest.raises(InputError, match="checksum"):
        load_model(path)


def test_unreadable_model_files(tmp_path):
    with pytest.raises(InputError):
        load_model(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text('{"format": "something-else"}')
    with pytest.raises(InputError):
        load_model(tmp_path / "bad.json")


def test_ground_truth_round_trip(tmp_path):
    generated = generate_synthetic(
        SynthesisSpec(dim=2, n_low=10, n_high=5, n_test=5, probe_size=400, noise_level=0.1, seed=2)
    )
    save_ground_truth(generated.truth, tmp_path / "truth.json", provenance("generate", {}, 2))
    truth = load_ground_truth(tmp_path / "truth.json")
    assert truth == generated.truth
    assert_allclose(truth.f_high(), generated.truth.f_high())


def test_run_config_sections(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"opt": {"restarts": 2}, "mcmc": {"n_samples": 50, "burn_in": 10}}))
    config = load_run_config(path)
    assert config.opt.restarts == 2
    assert config.mcmc.n_samples == 50
    assert config.laplace.max_iters == 100

    path.write_text(json.dumps({"optimizer": {}}))
    with pytest.raises(InputError):
        load_run_config(path)
    path.write_text(json.dumps({"mcmc": {"n_samples": 10, "burn_in": 20}}))
    with pytest.raises(InputError):
        load_run_config(path)


def test_tables(tmp_path):
    path = tmp_path / "table.csv"
    rows = [{"name": "a", "value": 1 / 3, "flag": True}, {"name": "b", "value": None, "flag": False}]
    count = write_table(path, ["name", "value", "flag"], rows, {"tool": "mfgpc"})
    assert count == 2
    lines = path.read_text().splitlines()
    assert lines[0] == '# tool: "mfgpc"'
    assert lines[1] == "name,value,flag"
    assert lines[2] == f"a,{format(1 / 3, '.17g')},1"
    assert lines[3] == "b,,0"
    parsed = read_table(path)
    assert float(parsed[0]["value"]) == 1 / 3
    assert parsed[1]["flag"] == "0"
    assert np.isclose(float(parsed[0]["value"]), 1 / 3)
