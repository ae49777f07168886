"""Independent verification: elliptical slice sampling of the latent posterior,
finite-difference gradients, dense curvature derivatives and low-dimensional
quadrature of the exact evidence."""

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import dblquad
from scipy.special import expit

from .errors import FiniteDifferenceError, InputError, SamplerError
from .kernels import kernel_matrix
from .laplace import build_prior
from .likelihood import LatentLike, as_latent, log_likelihood, sigmoid_family
from .linalg import jitchol, triangular_solve
from .models import FidelityDataset, Hyperparams, LaplaceConfig, McmcConfig

logger = logging.getLogger(__name__)

QUADRATURE_HALF_WIDTH = 8.0


@dataclass(frozen=True)
class McmcResult:
    probability: np.ndarray
    latent_mean: np.ndarray
    n_retained: int
    mean_shrinks: float
    ess: float
    log_likelihood_trace: np.ndarray


def effective_sample_size(chain) -> float:
    """Effective sample size from the initial positive sequence of autocorrelations."""
    chain = np.asarray(chain, dtype=float).reshape(-1)
    n = chain.shape[0]
    if n < 2:
        return float(n)
    centered = chain - chain.mean()
    variance = float(centered @ centered) / n
    if variance <= 0:
        # constant chain
        return float(n)
    size = 1 << (2 * n - 1).bit_length()
    spectrum = np.fft.rfft(centered, size)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), size)[:n] / n
    rho = acov / variance

    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(n / max(tau, 1.0 / n))


def _predictive_cross(hyper: Hyperparams, data: FidelityDataset, X_star: np.ndarray) -> np.ndarray:
    """Cov(f_H(x*), xi) for every test row."""
    return np.hstack([
        hyper.rho * kernel_matrix(hyper.theta_l, X_star, data.X_L),
        hyper.rho * kernel_matrix(hyper.theta_l, X_star, data.X_H),
        kernel_matrix(hyper.theta_d, X_star, data.X_H),
    ])


def _expected_sigmoid(mean: np.ndarray, variance: np.ndarray, degree: int) -> np.ndarray:
    """E[sigma(f)] for f ~ N(mean, variance) by Gauss-Hermite quadrature; variance broadcasts over columns."""
    nodes, weights = np.polynomial.hermite.hermgauss(degree)
    scale = np.sqrt(2.0 * np.maximum(variance, 0.0))
    total = np.zeros_like(mean)
    for node, weight in zip(nodes, weights):
        total += weight * expit(mean + scale * node)
    return total / math.sqrt(math.pi)


def mcmc_posterior_predict(
    data: FidelityDataset, hyper: Hyperparams, X_star, config: McmcConfig = None
) -> McmcResult:
    """Elliptical slice sampling of p(xi | D) with Rao-Blackwellized predictive probabilities."""
    config = config or McmcConfig()
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    n = data.latent_size
    prior_var = hyper.rho ** 2 * hyper.theta_l.amplitude + hyper.theta_d.amplitude

    if n == 0:
        mean = np.zeros(X_star.shape[0])
        probability = _expected_sigmoid(mean, np.full_like(mean, prior_var), config.quadrature_degree)
        return McmcResult(probability, mean, 0, 0.0, 0.0, np.empty(0))

    prior = build_prior(data, hyper, LaplaceConfig())
    chol = prior.factor.chol
    rng = np.random.default_rng(config.seed)

    xi = np.zeros(n)
    log_lik = log_likelihood(xi, data, hyper.rho)
    retained, trace = [], []
    total_shrinks = 0

    for iteration in range(config.n_samples):
        nu = chol @ rng.standard_normal(n)
        threshold = log_lik - rng.standard_exponential()
        theta = rng.uniform(0.0, 2.0 * math.pi)
        lower, upper = theta - 2.0 * math.pi, theta
        shrinks = 0
        while True:
            proposal = xi * math.cos(theta) + nu * math.sin(theta)
            proposal_log_lik = log_likelihood(proposal, data, hyper.rho)
            if proposal_log_lik > threshold:
                break
            shrinks += 1
            if shrinks > config.max_shrinks:
                raise SamplerError(
                    f"slice shrinkage exhausted after {config.max_shrinks} proposals at iteration {iteration}"
                )
            if theta < 0:
                lower = theta
            else:
                upper = theta
            theta = rng.uniform(lower, upper)
        xi, log_lik = proposal, proposal_log_lik
        total_shrinks += shrinks

        if iteration >= config.burn_in and (iteration - config.burn_in) % config.thin == 0:
            retained.append(xi)
            trace.append(log_lik)

    samples = np.array(retained)
    trace = np.array(trace)
    cross = _predictive_cross(hyper, data, X_star)
    means = cross @ prior.factor.solve(samples.T)
    V = triangular_solve(chol, cross.T)
    variance = prior_var - np.sum(V ** 2, axis=0)
    probability = _expected_sigmoid(means, variance[:, None], config.quadrature_degree).mean(axis=1)

    ess = effective_sample_size(trace)
    mean_shrinks = total_shrinks / config.n_samples
    logger.info("MCMC kept %d samples, %.2f shrinks per step, log-likelihood ESS %.1f",
                samples.shape[0], mean_shrinks, ess)
    return McmcResult(probability, means.mean(axis=1), samples.shape[0], mean_shrinks, ess, trace)


def finite_diff_gradient(f: Callable[[np.ndarray], float], x, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x0 = np.asarray(x, dtype=float).copy()
    grad = np.zeros(x0.shape[0])
    logger.debug("finite-difference gradient in %d coordinates, step %g", x0.shape[0], step)
    for j in range(x0.shape[0]):
        x = x0.copy()
        x[j] = x0[j] + step
        f_plus = f(x)
        x[j] = x0[j] - step
        f_minus = f(x)
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise FiniteDifferenceError(f"non-finite function value around coordinate {j}", coordinate=j)
        grad[j] = (f_plus - f_minus) / (2.0 * step)
    return grad


def dense_dw_dxi(xi: LatentLike, data: FidelityDataset, rho: float, index: int) -> np.ndarray:
    """Dense dW/dxi_index."""
    xi = as_latent(xi, data)
    n_l, n_h = data.n_l, data.n_h
    n = data.latent_size
    if not 0 <= index < n:
        raise InputError(f"latent index {index} out of range for size {n}")
    dW = np.zeros((n, n))
    if index < n_l:
        _, _, zeta = sigmoid_family(xi.f_low[index])
        dW[index, index] = zeta
        return dW

    j = (index - n_l) % n_h
    chain = rho if index < n_l + n_h else 1.0
    _, _, zeta = sigmoid_family(xi.f_high(rho)[j])
    coupling = np.array([[rho ** 2, rho], [rho, 1.0]])
    a, b = n_l + j, n_l + n_h + j
    dW[np.ix_([a, b], [a, b])] = coupling * chain * zeta
    return dW


def dense_third_derivative_contraction(M, xi: LatentLike, data: FidelityDataset, rho: float) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return np.array([np.sum(M * dense_dw_dxi(xi, data, rho, i)) for i in range(data.latent_size)])


def quadrature_log_evidence(data: FidelityDataset, hyper: Hyperparams, half_width: float = QUADRATURE_HALF_WIDTH) -> float:
    """log p(y) for one point per fidelity by adaptive quadrature.

    The likelihood only sees f_L(x_L) and f_H(x_H), so the integral runs over
    that pair in whitened coordinates.
    """
    if data.n_l != 1 or data.n_h != 1:
        raise InputError("quadrature evidence needs exactly one point per fidelity")
    rho = hyper.rho
    k_ll = kernel_matrix(hyper.theta_l, data.X_L, data.X_L)[0, 0]
    k_lh = kernel_matrix(hyper.theta_l, data.X_L, data.X_H)[0, 0]
    k_hh = kernel_matrix(hyper.theta_l, data.X_H, data.X_H)[0, 0]
    k_d = kernel_matrix(hyper.theta_d, data.X_H, data.X_H)[0, 0]
    cov = np.array([[k_ll, rho * k_lh], [rho * k_lh, rho ** 2 * k_hh + k_d]])
    L = jitchol(cov).chol
    sign_l = 2.0 * data.y_L[0] - 1.0
    sign_h = 2.0 * data.y_H[0] - 1.0

    def integrand(z2, z1):
        u = L[0, 0] * z1
        v = L[1, 0] * z1 + L[1, 1] * z2
        density = math.exp(-0.5 * (z1 * z1 + z2 * z2)) / (2.0 * math.pi)
        return float(expit(sign_l * u) * expit(sign_h * v)) * density

    value, _ = dblquad(integrand, -half_width, half_width, -half_width, half_width, epsabs=1e-12, epsrel=1e-10)
    return math.log(value)
