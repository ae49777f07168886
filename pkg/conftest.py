import numpy as np
import pytest

from mfgpc.models import FidelityDataset, Hyperparams, RbfParams


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: experiment-scale checks (MCMC agreement, benchmark reproduction)")


def _both_classes(labels: np.ndarray) -> np.ndarray:
    if labels.size >= 2:
        labels[0], labels[1] = 0, 1
    return labels


def make_dataset(rng, n_l, n_h, dim=2, both_classes=True):
    """Uniform inputs on the unit cube with labels from a smooth boundary."""
    X_L = rng.uniform(size=(n_l, dim))
    X_H = rng.uniform(size=(n_h, dim))
    y_L = (np.sin(4.0 * X_L[:, 0]) + X_L[:, -1] - 0.6 > 0).astype(int)
    y_H = (np.sin(4.0 * X_H[:, 0]) + 0.5 * X_H[:, -1] - 0.5 > 0).astype(int)
    if both_classes:
        y_L, y_H = _both_classes(y_L), _both_classes(y_H)
    return FidelityDataset(X_L, y_L, X_H, y_H)


def make_hyper(rng, rho=None):
    return Hyperparams(
        rho=float(rng.uniform(-2.0, 2.0)) if rho is None else rho,
        theta_l=RbfParams(s=float(rng.uniform(-0.5, 0.5)), sigma=float(rng.uniform(0.2, 0.4))),
        theta_d=RbfParams(s=float(rng.uniform(-1.0, 0.0)), sigma=float(rng.uniform(0.2, 0.4))),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def dataset_factory():
    return make_dataset


@pytest.fixture
def hyper_factory():
    return make_hyper


@pytest.fixture
def small_data(rng):
    return make_dataset(rng, 12, 6)


@pytest.fixture
def small_hyper():
    return Hyperparams(
        rho=0.8,
        theta_l=RbfParams(s=0.3, sigma=0.35),
        theta_d=RbfParams(s=-0.5, sigma=0.3),
    )
