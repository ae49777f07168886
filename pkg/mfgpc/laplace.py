"""Multi-fidelity Laplace inference.

Prior assembly, damped Newton mode-fitting, the approximate log marginal
likelihood, its gradients with respect to (rho, theta_l, theta_d) and MAP
prediction of the high-fidelity latent.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from .errors import ConvergenceError, InputError, PreconditionError
from .kernels import kernel_log_gradients, kernel_matrix
from .likelihood import (
    CurvatureW,
    LatentLike,
    LatentVector,
    as_latent,
    curvature,
    explicit_rho_terms,
    grad_log_likelihood,
    log_likelihood,
    third_derivative_contraction,
    w_sqrt,
)
from .linalg import Factor, jitchol, triangular_solve
from .models import FidelityDataset, Hyperparams, LaplaceConfig, PredictionScore

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PriorFactor:
    """Jittered prior covariance K and its Cholesky factor."""

    K: np.ndarray
    factor: Factor
    n_l: int
    n_h: int

    @property
    def low_block(self) -> slice:
        return slice(0, self.n_l + self.n_h)

    @property
    def delta_block(self) -> slice:
        return slice(self.n_l + self.n_h, self.n_l + 2 * self.n_h)


@dataclass(frozen=True)
class FittedModel:
    data: FidelityDataset
    hyper: Hyperparams
    config: LaplaceConfig
    prior: PriorFactor
    xi_hat: LatentVector
    alpha: np.ndarray
    W_at_mode: CurvatureW
    W_sqrt: np.ndarray
    b_chol: np.ndarray
    log_marginal: float
    newton_iters: int
    grad_norm: float
    converged: bool
    psi_trace: Tuple[float, ...] = ()
    # K~^{-1} f^ used by predict
    weights: np.ndarray = field(default=None, repr=False)

    @property
    def prior_chol(self) -> np.ndarray:
        return self.prior.factor.chol

    def mode_covariance(self) -> np.ndarray:
        """M = (K^-1 + W)^-1 = K - K W^1/2 B^-1 W^1/2 K; K is never inverted."""
        V = triangular_solve(self.b_chol, self.W_sqrt @ self.prior.K)
        return self.prior.K - V.T @ V

    def posterior_precision(self) -> np.ndarray:
        n = self.prior.K.shape[0]
        return self.prior.factor.solve(np.eye(n)) + self.W_at_mode.dense()


@dataclass(frozen=True)
class HyperGradient:
    dL_dRho: float
    dL_dTheta_l: Tuple[float, float]
    dL_dTheta_d: Tuple[float, float]

    def as_vector(self, hyper: Hyperparams) -> np.ndarray:
        """Gradient in the optimizer coordinates (rho, s_l, log sigma_l, s_d, log sigma_d)."""
        return np.array([
            self.dL_dRho,
            self.dL_dTheta_l[0], self.dL_dTheta_l[1] * hyper.theta_l.sigma,
            self.dL_dTheta_d[0], self.dL_dTheta_d[1] * hyper.theta_d.sigma,
        ])


def build_prior(data: FidelityDataset, hyper: Hyperparams, config: Optional[LaplaceConfig] = None) -> PriorFactor:
    config = config or LaplaceConfig()
    n_low_process = data.n_l + data.n_h
    n = data.latent_size
    K = np.zeros((n, n))
    X = data.X_all
    K[:n_low_process, :n_low_process] = kernel_matrix(hyper.theta_l, X, X)
    X_H = data.X_H
    K[n_low_process:, n_low_process:] = kernel_matrix(hyper.theta_d, X_H, X_H)
    factor = jitchol(K, config.jitter, config.max_jitter)
    K[np.diag_indices(n)] += factor.jitter
    return PriorFactor(K, factor, data.n_l, data.n_h)


def psi(xi: LatentLike, data: FidelityDataset, hyper: Hyperparams, prior: Optional[PriorFactor] = None) -> float:
    """Unnormalized log posterior lambda(xi) - 1/2 xi^T K^-1 xi."""
    xi = as_latent(xi, data)
    prior = prior or build_prior(data, hyper)
    return log_likelihood(xi, data, hyper.rho) - 0.5 * float(xi.values @ prior.factor.solve(xi.values))


def _b_factor(W_sqrt: np.ndarray, K: np.ndarray) -> np.ndarray:
    n = K.shape[0]
    B = np.eye(n) + W_sqrt @ K @ W_sqrt
    B = 0.5 * (B + B.T)
    return jitchol(B, jitter=0.0).chol


def fit_mode(data: FidelityDataset, hyper: Hyperparams, config: Optional[LaplaceConfig] = None) -> FittedModel:
    """Damped Newton ascent on Psi starting from xi = 0.

    Each step is solved through B = I + W^1/2 K W^1/2. The step in the
    ``a = K^-1 xi`` coordinates is halved until Psi does not decrease.
    """
    config = config or LaplaceConfig()
    data.validate_for_fit(config.require_both_classes)
    prior = build_prior(data, hyper, config)
    K = prior.K
    rho = hyper.rho

    a = np.zeros(data.latent_size)
    xi = np.zeros(data.latent_size)
    current = log_likelihood(xi, data, rho)
    trace = [current]
    converged = False
    grad_norm = np.inf
    iters = 0

    while True:
        W = curvature(xi, data, rho)
        g = grad_log_likelihood(xi, data, rho)
        grad_norm = float(np.max(np.abs(g - a)))
        if grad_norm < config.tol:
            converged = True
            break
        if iters >= config.max_iters:
            break
        iters += 1

        sW = w_sqrt(W)
        L_B = _b_factor(sW, K)
        b = W.dense() @ xi + g
        a_newton = b - sW @ triangular_solve(L_B, triangular_solve(L_B, sW @ (K @ b)), trans=True)
        direction = a_newton - a

        step = 1.0
        accepted = False
        for _ in range(config.max_halvings + 1):
            a_try = a + step * direction
            xi_try = K @ a_try
            value = log_likelihood(xi_try, data, rho) - 0.5 * float(a_try @ xi_try)
            if value >= current:
                accepted = True
                break
            step *= 0.5

        if not accepted:
            # No ascent left along the Newton direction: the mode is reached to working precision
            logger.debug("Newton step-halving exhausted at iteration %d", iters)
            converged = True
            break

        increase = value - current
        a, xi, current = a_try, xi_try, value
        trace.append(current)
        logger.debug("Newton iteration %d: psi=%.12g step=%.3g", iters, current, step)
        if increase < config.tol ** 2:
            converged = True
            break

    if not converged:
        raise ConvergenceError(
            "Newton mode-fitting did not converge",
            last_iterate=LatentVector.for_data(xi, data),
            iterations=iters,
            grad_norm=grad_norm,
        )

    return _assemble(data, hyper, config, prior, xi, a, iters, converged, tuple(trace))


def restore_model(
    data: FidelityDataset,
    hyper: Hyperparams,
    xi_hat,
    config: Optional[LaplaceConfig] = None,
    newton_iters: int = 0,
    converged: bool = True,
    psi_trace: Tuple[float, ...] = (),
    alpha=None,
) -> FittedModel:
    """Rebuild a fitted model from a stored mode without running Newton.

    ``alpha`` is K^-1 xi_hat as found by Newton; it is re-solved when absent.
    """
    config = config or LaplaceConfig()
    data.validate_for_fit(config.require_both_classes)
    prior = build_prior(data, hyper, config)
    xi = as_latent(xi_hat, data).values
    if alpha is None:
        a = prior.factor.solve(xi)
    else:
        a = np.asarray(alpha, dtype=float)
        if a.shape != xi.shape:
            raise InputError(f"alpha has length {a.shape[0]}, expected {xi.shape[0]}")
    return _assemble(data, hyper, config, prior, xi, a, newton_iters, converged, tuple(psi_trace))


def _assemble(data, hyper, config, prior, xi, a, iters, converged, trace) -> FittedModel:
    rho = hyper.rho
    W = curvature(xi, data, rho)
    g = grad_log_likelihood(xi, data, rho)
    sW = w_sqrt(W)
    L_B = _b_factor(sW, prior.K)
    value = (
        -0.5 * float(a @ xi)
        + log_likelihood(xi, data, rho)
        - float(np.sum(np.log(np.diag(L_B))))
    )
    xi_hat = LatentVector.for_data(xi, data)
    return FittedModel(
        data=data,
        hyper=hyper,
        config=config,
        prior=prior,
        xi_hat=xi_hat,
        alpha=a,
        W_at_mode=W,
        W_sqrt=sW,
        b_chol=L_B,
        log_marginal=value,
        newton_iters=iters,
        grad_norm=float(np.max(np.abs(g - a))),
        converged=converged,
        psi_trace=trace,
        weights=_predictive_weights(prior, xi_hat, rho),
    )


def log_marginal(model: FittedModel) -> float:
    """-1/2 xi^T K^-1 xi + lambda(xi) - 1/2 log|B| recomputed from the stored parts."""
    xi = model.xi_hat.values
    return (
        -0.5 * float(model.alpha @ xi)
        + log_likelihood(model.xi_hat, model.data, model.hyper.rho)
        - float(np.sum(np.log(np.diag(model.b_chol))))
    )


def _high_fidelity_map(n_l: int, n_h: int, rho: float) -> np.ndarray:
    """Linear map xi -> [f_L(X_L); rho f_L(X_H) + delta(X_H)]."""
    P = np.zeros((n_l + n_h, n_l + 2 * n_h))
    P[:n_l, :n_l] = np.eye(n_l)
    P[n_l:, n_l:n_l + n_h] = rho * np.eye(n_h)
    P[n_l:, n_l + n_h:] = np.eye(n_h)
    return P


def _predictive_weights(prior: PriorFactor, xi_hat: LatentVector, rho: float) -> np.ndarray:
    P = _high_fidelity_map(xi_hat.n_l, xi_hat.n_h, rho)
    K_tilde = P @ prior.K @ P.T
    f_hat = P @ xi_hat.values
    return jitchol(0.5 * (K_tilde + K_tilde.T), jitter=0.0).solve(f_hat)


def predict_latent(model: FittedModel, X_star) -> np.ndarray:
    """Posterior-mean high-fidelity latent k~*^T K~^-1 f^ at each row of X_star.

    k~* is the covariance of f_H(x*) with [f_L(X_L); f_H(X_H)], so the low block
    carries rho and the high block rho^2 k_l + k_d. Dropping either factor breaks
    the n_l = 0 reduction to single-fidelity GPC with kernel rho^2 k_l + k_d.
    """
    X_star = np.asarray(X_star, dtype=float)
    if X_star.size == 0:
        return np.empty(0)
    X_star = np.atleast_2d(X_star)
    if X_star.shape[1] != model.data.dim:
        raise InputError(
            f"test points have {X_star.shape[1]} features, model was trained on {model.data.dim}"
        )
    hyper = model.hyper
    data = model.data
    cross = np.hstack([
        hyper.rho * kernel_matrix(hyper.theta_l, X_star, data.X_L),
        hyper.rho ** 2 * kernel_matrix(hyper.theta_l, X_star, data.X_H)
        + kernel_matrix(hyper.theta_d, X_star, data.X_H),
    ])
    return cross @ model.weights


def predict(model: FittedModel, X_star) -> list:
    means = predict_latent(model, X_star)
    return [
        PredictionScore(latent_mean=float(m), probability=float(expit(m)), label=int(m > 0))
        for m in means
    ]


def grad_hyper(model: FittedModel) -> HyperGradient:
    """Analytic gradient of the log marginal likelihood at a converged mode."""
    if not model.converged:
        raise PreconditionError("hyperparameter gradients need a converged mode")

    data, hyper = model.data, model.hyper
    prior = model.prior
    K = prior.K
    a = model.alpha
    xi = model.xi_hat
    g = grad_log_likelihood(xi, data, hyper.rho)

    C = triangular_solve(model.b_chol, model.W_sqrt)
    R = C.T @ C
    M = model.mode_covariance()
    dL_dxi = -0.5 * third_derivative_contraction(M, xi, data, hyper.rho)

    def kernel_term(block: slice, dK_block: np.ndarray) -> float:
        a_b = a[block]
        explicit = 0.5 * float(a_b @ dK_block @ a_b) - 0.5 * float(np.sum(R[block, block] * dK_block))
        dK_g = np.zeros_like(g)
        dK_g[block] = dK_block @ g[block]
        dxi = dK_g - K @ (R @ dK_g)
        return explicit + float(dL_dxi @ dxi)

    def theta_gradient(params, X, block) -> Tuple[float, float]:
        if X.shape[0] == 0:
            return 0.0, 0.0
        _, dK_ds, dK_dlog_sigma = kernel_log_gradients(params, X)
        return (
            kernel_term(block, dK_ds),
            kernel_term(block, dK_dlog_sigma) / params.sigma,
        )

    terms = explicit_rho_terms(xi, data, hyper.rho)
    dxi_rho = M @ terms.dGradLambda_dRho
    dL_dRho = (
        terms.dLambda_dRho_explicit
        - 0.5 * float(np.sum(M * terms.dW_dRho_explicit))
        + float(dL_dxi @ dxi_rho)
    )

    return HyperGradient(
        dL_dRho=dL_dRho,
        dL_dTheta_l=theta_gradient(hyper.theta_l, data.X_all, prior.low_block),
        dL_dTheta_d=theta_gradient(hyper.theta_d, data.X_H, prior.delta_block),
    )
