import numpy as np
import pytest
from numpy.testing import assert_allclose

from mfgpc.errors import InputError, NumericalError
from mfgpc.kernels import (
    kernel_log_gradients,
    kernel_matrix,
    median_distance,
    squared_distances,
)
from mfgpc.linalg import jitchol, triangular_solve
from mfgpc.models import RbfParams
from mfgpc.oracles import finite_diff_gradient


def test_kernel_matches_closed_form(rng):
    params = RbfParams(s=0.7, sigma=0.4)
    Xa = rng.normal(size=(5, 3))
    Xb = rng.normal(size=(4, 3))
    K = kernel_matrix(params, Xa, Xb)
    for i in range(5):
        for j in range(4):
            d2 = np.sum((Xa[i] - Xb[j]) ** 2)
            assert K[i, j] == pytest.approx(np.exp(0.7) * np.exp(-d2 / (2 * 0.4 ** 2)), rel=1e-12)


def test_gram_matrix_is_symmetric_with_amplitude_diagonal(rng):
    params = RbfParams(s=-1.2, sigma=2.0)
    X = rng.normal(size=(30, 2)) * 100.0
    K = kernel_matrix(params, X, X)
    assert_allclose(K, K.T, rtol=0, atol=0)
    assert_allclose(np.diag(K), np.exp(-1.2), rtol=1e-15)
    assert np.all(squared_distances(X, X) >= 0)


def test_kernel_rejects_mismatched_dimensions():
    with pytest.raises(InputError):
        kernel_matrix(RbfParams(), np.zeros((2, 2)), np.zeros((3, 3)))


def test_empty_inputs_give_empty_matrix():
    K = kernel_matrix(RbfParams(), np.empty((0, 2)), np.ones((3, 2)))
    assert K.shape == (0, 3)


@pytest.mark.parametrize("s,sigma", [(0.0, 1.0), (1.5, 0.3), (-2.0, 4.0)])
def test_log_gradients_match_finite_differences(rng, s, sigma):
    X = rng.uniform(size=(7, 2))
    _, dK_ds, dK_dlog_sigma = kernel_log_gradients(RbfParams(s=s, sigma=sigma), X)

    def entry(i, j):
        return lambda v: kernel_matrix(RbfParams.from_log(v[0], v[1]), X, X)[i, j]

    for i, j in [(0, 0), (0, 3), (5, 2), (6, 6)]:
        numeric = finite_diff_gradient(entry(i, j), [s, np.log(sigma)], step=1e-6)
        assert_allclose([dK_ds[i, j], dK_dlog_sigma[i, j]], numeric, rtol=1e-6, atol=1e-10)


def test_median_distance_fallbacks():
    assert median_distance(np.zeros((1, 2))) == 1.0
    assert median_distance(np.ones((4, 2))) == 1.0
    assert median_distance(np.array([[0.0], [3.0]])) == pytest.approx(3.0)


def test_rbf_params_reject_non_finite_and_nonpositive_sigma():
    with pytest.raises(ValueError):
        RbfParams(s=float("nan"))
    with pytest.raises(ValueError):
        RbfParams(sigma=0.0)


def test_jitchol_adds_relative_jitter_to_singular_matrix():
    matrix = np.ones((5, 5)) * 2.0
    factor = jitchol(matrix, jitter=1e-8)
    assert factor.jitter == pytest.approx(2e-8)
    assert_allclose(factor.chol @ factor.chol.T, matrix + factor.jitter * np.eye(5), atol=1e-12)


def test_jitchol_escalates_and_then_gives_up():
    matrix = np.diag([1.0, 1.0, -1e-6])
    factor = jitchol(matrix, jitter=1e-8, max_jitter=1e-4)
    assert factor.jitter > 1e-6
    with pytest.raises(NumericalError) as excinfo:
        jitchol(-np.eye(3))
    assert excinfo.value.diagnostics["size"] == 3


def test_factor_solves_and_logdet(rng):
    A = rng.normal(size=(6, 6))
    spd = A @ A.T + 6 * np.eye(6)
    factor = jitchol(spd, jitter=0.0)
    b = rng.normal(size=6)
    assert_allclose(spd @ factor.solve(b), b, atol=1e-10)
    assert factor.logdet() == pytest.approx(np.linalg.slogdet(spd)[1], rel=1e-12)
    y = triangular_solve(factor.chol, b)
    assert_allclose(factor.chol @ y, b, atol=1e-12)
    z = triangular_solve(factor.chol, b, trans=True)
    assert_allclose(factor.chol.T @ z, b, atol=1e-12)


def test_empty_factor():
    factor = jitchol(np.empty((0, 0)))
    assert factor.size == 0
    assert factor.solve(np.empty(0)).shape == (0,)
