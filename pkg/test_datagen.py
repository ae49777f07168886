import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from pydantic import ValidationError

from mfgpc.datagen import (
    LabelPool,
    budget_sizes,
    budget_subsample,
    disagreement_rate,
    generate_synthetic,
    inject_flip_noise,
    load_dataset,
    pool_from_dataset,
    sample_indices,
    save_dataset,
)
from mfgpc.errors import DatasetParseError, InputError
from mfgpc.models import SynthesisSpec

SMALL = dict(dim=2, n_low=30, n_high=15, n_test=40, probe_size=400, noise_level=0.1, seed=3)


@pytest.fixture(scope="module")
def generated():
    return generate_synthetic(SynthesisSpec(**SMALL))


def test_generated_sizes(generated):
    assert generated.dataset.n_l == 30
    assert generated.dataset.n_h == 15
    assert generated.test.n == 40
    assert generated.pool.n == 85
    assert len(generated.truth.f_low) == 85


def test_generation_is_deterministic(generated):
    again = generate_synthetic(SynthesisSpec(**SMALL))
    assert_array_equal(again.dataset.X_L, generated.dataset.X_L)
    assert_array_equal(again.dataset.y_H, generated.dataset.y_H)
    assert again.truth.rho == generated.truth.rho


def test_probe_disagreement_hits_target(generated):
    truth = generated.truth
    assert truth.rho >= 0
    assert abs(truth.disagreement - 0.1) <= truth.spec.noise_tolerance


def test_labels_follow_latent_signs(generated):
    truth = generated.truth
    f_low = np.asarray(truth.f_low)
    assert_array_equal(generated.pool.y_low, (f_low > 0).astype(int))
    assert_array_equal(generated.pool.y_high, (truth.f_high() > 0).astype(int))
    assert_array_equal(generated.dataset.y_L, generated.pool.y_low[:30])


def test_bernoulli_labels_are_binary():
    data = generate_synthetic(SynthesisSpec(**{**SMALL, "bernoulli_labels": True}))
    assert set(np.unique(data.pool.y_high)) <= {0, 1}


def test_noise_level_must_stay_below_one_half():
    with pytest.raises(ValidationError):
        SynthesisSpec(noise_level=0.6)


def test_disagreement_rate_is_monotone_in_rho(rng):
    f_low, delta = rng.normal(size=500), rng.normal(size=500)
    rates = [disagreement_rate(f_low, delta, r) for r in np.linspace(0, 20, 41)]
    assert np.all(np.diff(rates) <= 0)


def test_flip_noise():
    labels = np.array([0, 1, 1, 0, 1] * 40)
    assert_array_equal(inject_flip_noise(labels, 0.0, seed=1), labels)
    assert_array_equal(inject_flip_noise(labels, 1.0, seed=1), 1 - labels)
    assert_array_equal(inject_flip_noise(labels, 0.3, seed=9), inject_flip_noise(labels, 0.3, seed=9))
    flipped = np.mean(inject_flip_noise(labels, 0.3, seed=9) != labels)
    assert 0.15 < flipped < 0.45
    with pytest.raises(InputError):
        inject_flip_noise(labels, 1.5, seed=0)


def test_pool_from_dataset(generated):
    pool = pool_from_dataset(generated.dataset, 0.0, seed=0)
    assert pool.n == 45
    assert_array_equal(pool.y_low, pool.y_high)


@pytest.mark.parametrize(
    "budget,share,cost,expected",
    [(100, 1.0, 0.25, (0, 100)), (100, 0.5, 0.25, (200, 50)), (100, 0.0, 0.125, (800, 0)), (10, 0.25, 0.5, (15, 3))],
)
def test_budget_sizes(budget, share, cost, expected):
    assert budget_sizes(budget, share, cost) == expected


def test_budget_sizes_validation():
    with pytest.raises(InputError):
        budget_sizes(100, 1.2, 0.25)
    with pytest.raises(InputError):
        budget_sizes(100, 0.5, 0.0)


def test_sample_indices_are_disjoint(generated):
    lo, hi, rest = sample_indices(generated.pool, 20, 10, seed=4)
    assert len(set(lo) | set(hi) | set(rest)) == generated.pool.n
    assert len(lo) == 20 and len(hi) == 10
    assert set(np.unique(generated.pool.y_high[hi])) == {0, 1}
    with pytest.raises(InputError):
        sample_indices(generated.pool, 80, 10, seed=4)


def test_sample_indices_gives_up_on_single_class_pool():
    pool = LabelPool(np.zeros((10, 1)), np.ones(10, dtype=int), np.ones(10, dtype=int))
    with pytest.raises(InputError, match="both classes"):
        sample_indices(pool, 3, 3, seed=0, max_resample=5)


def test_budget_subsample(generated):
    train = budget_subsample(generated.pool, budget=10, hf_share=0.5, lf_cost_fraction=0.5, seed=2)
    assert (train.n_l, train.n_h) == (10, 5)
    from_dataset = budget_subsample(generated.dataset, budget=10, hf_share=0.5, lf_cost_fraction=0.5, seed=2)
    assert (from_dataset.n_l, from_dataset.n_h) == (10, 5)
    with pytest.raises(InputError):
        budget_subsample(generated.dataset, budget=100, hf_share=1.0)


def test_dataset_file_reloads_exactly(generated, tmp_path):
    path = tmp_path / "data.csv"
    save_dataset(generated.dataset, path, {"tool": "mfgpc", "seed": 3})
    text = path.read_text()
    assert text.startswith("# tool: ")
    assert "x1,x2,y,fidelity" in text
    loaded = load_dataset(path)
    assert_array_equal(loaded.X_L, generated.dataset.X_L)
    assert_array_equal(loaded.X_H, generated.dataset.X_H)
    assert_array_equal(loaded.y_L, generated.dataset.y_L)
    assert loaded.checksum() == generated.dataset.checksum()


def test_dataset_parse_errors_name_the_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# comment\nx1,y,fidelity\n0.5,1,low\n0.7,2,high\n")
    with pytest.raises(DatasetParseError) as excinfo:
        load_dataset(path)
    assert excinfo.value.line == 4
    path.write_text("x1,y,fidelity\n0.5,1,medium\n")
    with pytest.raises(DatasetParseError, match="fidelity"):
        load_dataset(path)
    path.write_text("x1,x2,y,fidelity\n0.5,1,low\n")
    with pytest.raises(DatasetParseError, match="columns"):
        load_dataset(path)
    with pytest.raises(InputError):
        load_dataset(tmp_path / "missing.csv")


def test_single_fidelity_file(tmp_path):
    path = tmp_path / "hf.csv"
    path.write_text("x1,x2,y,fidelity\n0.1,0.2,0,high\n0.3,0.4,1,high\n")
    data = load_dataset(path)
    assert data.n_l == 0 and data.n_h == 2
    assert_allclose(data.X_H, [[0.1, 0.2], [0.3, 0.4]])
