"""Isotropic RBF kernel and its parameter gradients."""

from typing import Tuple

import numpy as np
from scipy.spatial.distance import pdist

from .errors import InputError
from .models import RbfParams


def _check_inputs(Xa: np.ndarray, Xb: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    Xa = np.atleast_2d(np.asarray(Xa, dtype=float))
    Xb = np.atleast_2d(np.asarray(Xb, dtype=float))
    if Xa.shape[1] != Xb.shape[1] and Xa.size and Xb.size:
        raise InputError(
            f"kernel inputs have different dimensionality: {Xa.shape[1]} vs {Xb.shape[1]}"
        )
    return Xa, Xb


def squared_distances(Xa: np.ndarray, Xb: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, expanded-square form clamped at zero."""
    same = Xa is Xb
    Xa, Xb = _check_inputs(Xa, Xb)
    if Xa.shape[0] == 0 or Xb.shape[0] == 0:
        return np.zeros((Xa.shape[0], Xb.shape[0]))
    sq = (
        np.sum(Xa ** 2, axis=1)[:, None]
        + np.sum(Xb ** 2, axis=1)[None, :]
        - 2.0 * Xa @ Xb.T
    )
    np.maximum(sq, 0.0, out=sq)
    if same:
        sq = 0.5 * (sq + sq.T)
        np.fill_diagonal(sq, 0.0)
    return sq


def kernel_matrix(params: RbfParams, Xa: np.ndarray, Xb: np.ndarray) -> np.ndarray:
    """k(x_i, x_j) = exp(s) * exp(-|x_i - x_j|^2 / (2 sigma^2)); no jitter is added."""
    sq = squared_distances(Xa, Xb)
    return np.exp(params.s - sq / (2.0 * params.sigma ** 2))


def kernel_param_gradients(params: RbfParams, Xa: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Return (dK/ds, dK/dsigma) on the square Gram matrix of Xa."""
    sq = squared_distances(Xa, Xa)
    K = np.exp(params.s - sq / (2.0 * params.sigma ** 2))
    return K, K * sq / params.sigma ** 3


def kernel_log_gradients(params: RbfParams, Xa: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (K, dK/ds, dK/dlog sigma); the optimizer works in log sigma."""
    dK_ds, dK_dsigma = kernel_param_gradients(params, Xa)
    return dK_ds, dK_ds, dK_dsigma * params.sigma


def median_distance(X: np.ndarray) -> float:
    """Median pairwise distance; 1.0 when it is undefined or zero."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 2:
        return 1.0
    distance = float(np.median(pdist(X)))
    return distance if distance > 0 else 1.0
