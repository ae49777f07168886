"""Bernoulli-sigmoid likelihood over the multi-fidelity latent vector.

The latent vector is ordered [f_L(X_L); f_L(X_H); delta(X_H)] and the
high-fidelity latent is f_H = rho * f_L(X_H) + delta(X_H).
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy.special import expit, log_expit

from .errors import InputError
from .models import FidelityDataset


@dataclass(frozen=True)
class LatentVector:
    values: np.ndarray
    n_l: int
    n_h: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.shape[0] != self.n_l + 2 * self.n_h:
            raise InputError(
                f"latent vector has length {values.shape[0]}, expected {self.n_l + 2 * self.n_h}"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, data: FidelityDataset) -> "LatentVector":
        return cls(np.zeros(data.latent_size), data.n_l, data.n_h)

    @classmethod
    def for_data(cls, values, data: FidelityDataset) -> "LatentVector":
        return cls(values, data.n_l, data.n_h)

    @property
    def f_low(self) -> np.ndarray:
        """f_L at the low-fidelity inputs."""
        return self.values[: self.n_l]

    @property
    def f_low_at_high(self) -> np.ndarray:
        return self.values[self.n_l: self.n_l + self.n_h]

    @property
    def delta(self) -> np.ndarray:
        return self.values[self.n_l + self.n_h:]

    def f_high(self, rho: float) -> np.ndarray:
        return rho * self.f_low_at_high + self.delta

    def __len__(self) -> int:
        return self.values.shape[0]


LatentLike = Union[LatentVector, np.ndarray]


def as_latent(xi: LatentLike, data: FidelityDataset) -> LatentVector:
    if isinstance(xi, LatentVector):
        if (xi.n_l, xi.n_h) != (data.n_l, data.n_h):
            raise InputError(
                f"latent vector blocks ({xi.n_l}, {xi.n_h}) do not match dataset ({data.n_l}, {data.n_h})"
            )
        return xi
    return LatentVector.for_data(xi, data)


@dataclass(frozen=True)
class CurvatureW:
    """Negative Hessian of the log-likelihood in compact form.

    Dense layout: blockdiag(diag(A), [[rho^2, rho], [rho, 1]] kron diag(D)).
    """

    A: np.ndarray
    D: np.ndarray
    rho: float

    @property
    def n_l(self) -> int:
        return self.A.shape[0]

    @property
    def n_h(self) -> int:
        return self.D.shape[0]

    def dense(self) -> np.ndarray:
        n = self.n_l + 2 * self.n_h
        W = np.zeros((n, n))
        W[: self.n_l, : self.n_l] = np.diag(self.A)
        coupling = np.array([[self.rho ** 2, self.rho], [self.rho, 1.0]])
        W[self.n_l:, self.n_l:] = np.kron(coupling, np.diag(self.D))
        return W


@dataclass(frozen=True)
class ExplicitRhoTerms:
    dGradLambda_dRho: np.ndarray
    dLambda_dRho_explicit: float
    dW_dRho_explicit: np.ndarray


def sigmoid_family(z) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (sigma(z), sigma'(z), sigma''(z)) computed without overflow."""
    z = np.asarray(z, dtype=float)
    s = expit(z)
    s_neg = expit(-z)
    omega = s * s_neg
    zeta = omega * (s_neg - s)
    if z.ndim == 0:
        return float(s), float(omega), float(zeta)
    return s, omega, zeta


def _signed(y: np.ndarray) -> np.ndarray:
    return 2.0 * y - 1.0


def log_likelihood(xi: LatentLike, data: FidelityDataset, rho: float) -> float:
    xi = as_latent(xi, data)
    low = np.sum(log_expit(_signed(data.y_L) * xi.f_low))
    high = np.sum(log_expit(_signed(data.y_H) * xi.f_high(rho)))
    return float(low + high)


def grad_log_likelihood(xi: LatentLike, data: FidelityDataset, rho: float) -> np.ndarray:
    xi = as_latent(xi, data)
    residual_low = data.y_L - expit(xi.f_low)
    residual_high = data.y_H - expit(xi.f_high(rho))
    return np.concatenate([residual_low, rho * residual_high, residual_high])


def curvature(xi: LatentLike, data: FidelityDataset, rho: float) -> CurvatureW:
    xi = as_latent(xi, data)
    _, A, _ = sigmoid_family(xi.f_low)
    _, D, _ = sigmoid_family(xi.f_high(rho))
    return CurvatureW(np.atleast_1d(A), np.atleast_1d(D), float(rho))


def w_sqrt(W: CurvatureW) -> np.ndarray:
    """Exact symmetric square root of the dense curvature matrix."""
    n = W.n_l + 2 * W.n_h
    root = np.zeros((n, n))
    root[: W.n_l, : W.n_l] = np.diag(np.sqrt(W.A))
    coupling = np.array([[W.rho ** 2, W.rho], [W.rho, 1.0]]) / np.sqrt(W.rho ** 2 + 1.0)
    root[W.n_l:, W.n_l:] = np.kron(coupling, np.diag(np.sqrt(W.D)))
    return root


def explicit_rho_terms(xi: LatentLike, data: FidelityDataset, rho: float) -> ExplicitRhoTerms:
    """Partial derivatives in rho holding xi fixed."""
    xi = as_latent(xi, data)
    f_lh = xi.f_low_at_high
    f_high = xi.f_high(rho)
    s_high, omega_high, zeta_high = (np.atleast_1d(v) for v in sigmoid_family(f_high))
    residual = data.y_H - s_high

    d_grad = np.concatenate([
        np.zeros(data.n_l),
        residual - rho * f_lh * omega_high,
        -f_lh * omega_high,
    ])

    y_signed = _signed(data.y_H)
    d_lambda = float(np.sum(y_signed * f_lh * expit(-y_signed * f_high)))

    n = data.latent_size
    dD = np.diag(f_lh * zeta_high)
    D = np.diag(omega_high)
    dW = np.zeros((n, n))
    dW[data.n_l:, data.n_l:] = (
        np.kron(np.array([[rho ** 2, rho], [rho, 1.0]]), dD)
        + np.kron(np.array([[2.0 * rho, 1.0], [1.0, 0.0]]), D)
    )
    return ExplicitRhoTerms(d_grad, d_lambda, dW)


def third_derivative_contraction(
    M: np.ndarray, xi: LatentLike, data: FidelityDataset, rho: float
) -> np.ndarray:
    """Component i is sum(M o dW/dxi_i), using the <= 4 nonzeros of dW/dxi_i."""
    xi = as_latent(xi, data)
    n = data.latent_size
    M = np.asarray(M, dtype=float)
    if M.shape != (n, n):
        raise InputError(f"contraction matrix has shape {M.shape}, expected {(n, n)}")

    n_l, n_h = data.n_l, data.n_h
    out = np.empty(n)
    _, _, zeta_low = sigmoid_family(xi.f_low)
    out[:n_l] = np.diag(M)[:n_l] * zeta_low

    a = n_l + np.arange(n_h)
    b = a + n_h
    _, _, zeta_high = sigmoid_family(xi.f_high(rho))
    m_aa = M[a, a]
    m_bb = M[b, b]
    m_ab = M[a, b] + M[b, a]
    out[a] = (m_aa * rho ** 3 + m_ab * rho ** 2 + m_bb * rho) * zeta_high
    out[b] = (m_bb + m_ab * rho + m_aa * rho ** 2) * zeta_high
    return out
