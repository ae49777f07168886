import numpy as np
import pytest
from numpy.testing import assert_allclose
from sklearn.metrics import roc_auc_score

from mfgpc import evalharness
from mfgpc.datagen import generate_synthetic
from mfgpc.errors import InputError, MfgpcError, UndefinedMetricError
from mfgpc.evalharness import (
    BenchmarkDataset,
    auc_profile,
    budget_sweep,
    mean_auc,
    resolve_methods,
    roc_auc,
    run_benchmark,
    run_seed,
    sensitivity_grid,
    split_pool,
)
from mfgpc.hyperopt import optimize
from mfgpc.laplace import fit_mode, predict_latent
from mfgpc.models import BenchmarkProtocol, OptConfig, RunRecord, SfDataset, SynthesisSpec
from mfgpc.storage import write_table

OPT = OptConfig(restarts=1, max_steps=15)


@pytest.fixture(scope="module")
def pool():
    spec = SynthesisSpec(dim=2, n_low=40, n_high=20, n_test=40, probe_size=400, noise_level=0.1, seed=11)
    return generate_synthetic(spec).pool


def test_roc_auc_known_values():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)
    assert roc_auc([1, 2, 3, 4], [0, 0, 1, 1]) == 1.0
    assert roc_auc([4, 3, 2, 1], [0, 0, 1, 1]) == 0.0
    assert roc_auc([1, 1, 1, 1], [0, 1, 0, 1]) == 0.5


def test_roc_auc_agrees_with_sklearn(rng):
    for _ in range(20):
        labels = rng.integers(0, 2, size=50)
        labels[:2] = [0, 1]
        scores = np.round(rng.normal(size=50), 1)
        assert roc_auc(scores, labels) == pytest.approx(roc_auc_score(labels, scores), abs=1e-12)


def test_roc_auc_is_invariant_to_monotone_transforms(rng):
    labels = np.array([0, 1] * 20)
    scores = rng.normal(size=40)
    assert roc_auc(scores, labels) == pytest.approx(roc_auc(np.exp(3 * scores) + 2, labels))


def test_roc_auc_errors():
    with pytest.raises(UndefinedMetricError):
        roc_auc([0.2, 0.3], [1, 1])
    with pytest.raises(InputError):
        roc_auc([0.2, 0.3, 0.4], [0, 1])


def _record(method, auc, dataset_id="d"):
    return RunRecord(dataset_id=dataset_id, method=method, seed=0, roc_auc=auc, n_low=0, n_high=1)


def test_auc_profile_and_means():
    records = [_record("a", 0.6), _record("a", 0.9), _record("b", 0.95)]
    profile = auc_profile(records, [0.5, 0.7, 0.92])
    assert_allclose(profile["a"], [1.0, 0.5, 0.0])
    assert_allclose(profile["b"], [1.0, 1.0, 1.0])
    assert mean_auc(records) == {("d", "a"): pytest.approx(0.75), ("d", "b"): pytest.approx(0.95)}
    with pytest.raises(InputError):
        auc_profile([], [0.5])


def test_unknown_method_lists_registered_names():
    with pytest.raises(InputError) as excinfo:
        resolve_methods(["mf-gpc", "svm"])
    message = str(excinfo.value)
    for name in ("mf-gpc", "gpc", "c-gpc", "s-gpc"):
        assert name in message


def test_run_seeds_are_stable_and_distinct():
    assert run_seed(7, 0) == run_seed(7, 0)
    assert len({run_seed(7, r) for r in range(10)}) == 10


def test_split_pool(pool):
    train, test_ids = split_pool(pool, 20, 10, seed=1, max_resample=100, test_size=25)
    assert (train.n_l, train.n_h) == (20, 10)
    assert len(test_ids) == 25
    with pytest.raises(InputError):
        split_pool(pool, 60, 40, seed=1, max_resample=100)


def test_run_benchmark(pool, tmp_path):
    score_path = tmp_path / "scores.csv"
    write_table(
        score_path,
        ["dataset_id", "point_id", "score"],
        [{"dataset_id": "synthetic", "point_id": i, "score": float(x[0])} for i, x in enumerate(pool.X)],
    )
    protocol = BenchmarkProtocol(n_high=10, lf_ratio=2.0, runs=2, seed=3, test_size=30)
    report = run_benchmark(
        [BenchmarkDataset("synthetic", pool, 0.1)],
        ["mf-gpc", "gpc", "external"],
        protocol,
        OPT,
        {"external": score_path},
    )
    assert not report.failures
    assert len(report.records) == 6
    for record in report.records:
        assert 0.0 <= record.roc_auc <= 1.0
        assert (record.n_low, record.n_high) == (20, 10)
    seeds = {r.seed for r in report.records}
    assert seeds == {run_seed(3, 0), run_seed(3, 1)}


def test_failing_method_is_recorded_not_fatal(pool, monkeypatch):
    def broken(task):
        raise MfgpcError("method exploded")

    monkeypatch.setitem(evalharness.METHODS, "broken", broken)
    protocol = BenchmarkProtocol(n_high=10, lf_ratio=1.0, runs=1, test_size=20)
    report = run_benchmark([BenchmarkDataset("synthetic", pool)], ["broken", "gpc"], protocol, OPT)
    assert [r.method for r in report.records] == ["gpc"]
    assert report.failures[0].method == "broken"
    assert "exploded" in report.failures[0].message


def test_budget_sweep_cells(pool):
    cells = budget_sweep(
        {0.0: pool},
        hf_shares=[0.0, 1.0],
        lf_cost_fractions=[0.5, 0.05],
        runs=1,
        budget=10,
        opt=OPT,
        test_size=20,
    )
    by_key = {(c.method, c.lf_cost_fraction, c.hf_share): c for c in cells}
    assert len(cells) == 5
    assert (by_key[("mf-gpc", 0.5, 0.0)].n_low, by_key[("mf-gpc", 0.5, 0.0)].n_high) == (20, 0)
    assert (by_key[("mf-gpc", 0.5, 1.0)].n_low, by_key[("mf-gpc", 0.5, 1.0)].n_high) == (0, 10)
    infeasible = by_key[("mf-gpc", 0.05, 0.0)]
    assert infeasible.mean_auc is None and infeasible.note.startswith("infeasible")
    reference = by_key[("gpc", 1.0, 1.0)]
    assert reference.n_high == 10
    assert reference.mean_auc is not None
    # the all-HF cell is a pure cache hit regardless of the LF cost
    assert by_key[("mf-gpc", 0.05, 1.0)].mean_auc == by_key[("mf-gpc", 0.5, 1.0)].mean_auc


def test_sensitivity_grid_marks_tuned_point(pool):
    train, test_ids = split_pool(pool, 20, 10, seed=0, max_resample=100)
    model = fit_mode(train, optimize(train, OPT).hyper)
    validation = SfDataset(pool.X[test_ids], pool.y_high[test_ids])
    grid = [model.hyper.rho, 0.0, 2.0]
    points = sensitivity_grid(model, validation, "rho", grid)
    assert [p.tuned for p in points] == [True, False, False]
    assert all(p.roc_auc is None or 0.0 <= p.roc_auc <= 1.0 for p in points)

    sigma = model.hyper.theta_d.sigma
    kernel_points = sensitivity_grid(model, validation, "theta_d", [(0.0, sigma), (-3.0, sigma)])
    assert [p.value for p in kernel_points] == [(0.0, sigma), (-3.0, sigma)]
    with pytest.raises(InputError):
        sensitivity_grid(model, validation, "noise", [0.1])


@pytest.fixture(scope="module")
def tuned_case():
    spec = SynthesisSpec(dim=2, n_low=60, n_high=12, n_test=200, probe_size=400, noise_level=0.1, seed=5)
    generated = generate_synthetic(spec)
    return optimize(generated.dataset, OptConfig(restarts=2, max_steps=40)), generated.test


def test_sensitivity_tuned_point_reproduces_model_auc(tuned_case):
    model, test = tuned_case
    (point,) = sensitivity_grid(model, test, "rho", [model.hyper.rho])
    assert point.tuned
    assert point.roc_auc == pytest.approx(roc_auc(predict_latent(model, test.X), test.y))


def test_sensitivity_auc_drops_when_coupling_changes_sign(tuned_case):
    model, test = tuned_case
    assert model.hyper.rho > 0
    tuned, flipped = sensitivity_grid(model, test, "rho", [model.hyper.rho, -1.0])
    assert flipped.roc_auc < tuned.roc_auc


def _method_means(dim, count, runs):
    datasets = []
    for index in range(count):
        spec = SynthesisSpec(dim=dim, n_low=450, n_high=150, n_test=400, probe_size=1000,
                             noise_level=0.2, seed=index)
        datasets.append(BenchmarkDataset(f"synthetic-{dim}d-{index}", generate_synthetic(spec).pool, 0.2))
    protocol = BenchmarkProtocol(n_high=75, lf_ratio=3.0, runs=runs, seed=0)
    report = run_benchmark(datasets, ["mf-gpc", "gpc"], protocol, OptConfig(restarts=2))
    assert not report.failures
    by_method = {}
    for (_, method), value in mean_auc(report.records).items():
        by_method.setdefault(method, []).append(value)
    return {method: float(np.mean(values)) for method, values in by_method.items()}


@pytest.mark.slow
def test_multi_fidelity_benchmark_2d():
    means = _method_means(2, count=4, runs=2)
    assert means["mf-gpc"] >= 0.92
    assert means["mf-gpc"] >= means["gpc"] - 0.01


@pytest.mark.slow
def test_multi_fidelity_benchmark_5d_beats_high_fidelity_only():
    means = _method_means(5, count=4, runs=2)
    assert means["mf-gpc"] - means["gpc"] >= 0.05


@pytest.mark.slow
def test_budget_split_follows_label_noise():
    def pool_at(noise):
        spec = SynthesisSpec(dim=2, n_low=800, n_high=100, n_test=500, probe_size=1000, noise_level=noise, seed=0)
        return generate_synthetic(spec).pool

    cells = budget_sweep(pool_at, hf_shares=[0.0, 1.0], lf_cost_fractions=[0.125], noise_levels=[0.0, 0.4],
                         runs=10, opt=OptConfig(restarts=1, max_steps=50), test_size=400)
    table = {(c.noise_level, c.hf_share): c for c in cells if c.method == "mf-gpc"}
    assert all(cell.runs == 10 for cell in table.values())
    assert table[(0.0, 0.0)].mean_auc >= table[(0.0, 1.0)].mean_auc
    assert table[(0.4, 0.0)].mean_auc < table[(0.4, 1.0)].mean_auc
