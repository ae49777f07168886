"""Jittered Cholesky factorization and triangular-solve helpers."""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .config import settings
from .errors import NumericalError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Factor:
    """Lower Cholesky factor of ``matrix + jitter * I``."""

    chol: np.ndarray
    jitter: float

    @property
    def size(self) -> int:
        return self.chol.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.size == 0:
            return np.zeros_like(b, dtype=float)
        return la.cho_solve((self.chol, True), b)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


def jitchol(matrix: np.ndarray, jitter: float = None, max_jitter: float = None) -> Factor:
    """Cholesky with diagonal jitter relative to the mean diagonal, escalated x10 on failure.

    The starting jitter is always added. Raises NumericalError once the
    relative jitter would exceed ``max_jitter``.
    """
    jitter = settings.JITTER if jitter is None else jitter
    max_jitter = settings.MAX_JITTER if max_jitter is None else max_jitter
    n = matrix.shape[0]
    if n == 0:
        return Factor(np.empty((0, 0)), 0.0)

    scale = float(np.mean(np.diag(matrix)))
    if not scale > 0:
        scale = 1.0
    relative = jitter
    while relative <= max_jitter * (1 + 1e-12):
        added = relative * scale
        try:
            chol = la.cholesky(matrix + added * np.eye(n), lower=True, check_finite=True)
            if relative > jitter:
                logger.warning("Cholesky needed jitter %.1e (relative) on a %dx%d matrix", relative, n, n)
            return Factor(chol, added)
        except (la.LinAlgError, ValueError):
            relative = relative * 10.0 if relative > 0 else 1e-12

    raise NumericalError(
        "Cholesky factorization failed after maximum jitter",
        size=n,
        last_jitter=relative / 10.0 * scale,
        min_diagonal=float(np.min(np.diag(matrix))),
    )


def triangular_solve(chol: np.ndarray, b: np.ndarray, trans: bool = False) -> np.ndarray:
    """Solve L x = b (or L^T x = b when ``trans``) for lower-triangular L."""
    if chol.shape[0] == 0:
        return np.zeros_like(b, dtype=float)
    return la.solve_triangular(chol, b, lower=True, trans="T" if trans else "N")
