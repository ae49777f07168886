"""Model selection by maximizing the Laplace log marginal likelihood.

Search runs in (rho, s_l, log sigma_l, s_d, log sigma_d) with L-BFGS-B on
-L, analytic gradients and several restarts.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize

from .errors import MfgpcError, OptimizationError
from .kernels import median_distance
from .laplace import FittedModel, fit_mode, grad_hyper
from .models import FidelityDataset, Hyperparams, OptConfig

logger = logging.getLogger(__name__)

S_BOUNDS = (-10.0, 10.0)
# log sigma is bounded to this many decades around the median distance
LOG_SIGMA_DECADES = 3.0


@dataclass
class RestartOutcome:
    index: int
    initial: Hyperparams
    initial_L: Optional[float] = None
    final: Optional[Hyperparams] = None
    final_L: Optional[float] = None
    steps: int = 0
    grad_norm: Optional[float] = None
    status: str = "failed"
    message: str = ""
    trace: List[float] = field(default_factory=list)

    @property
    def usable(self) -> bool:
        return self.final is not None


@dataclass
class SearchResult:
    model: FittedModel
    restarts: List[RestartOutcome]
    best_index: int


def active_mask(data: FidelityDataset) -> np.ndarray:
    """Coordinates the search may move; rho and theta_d are frozen without high-fidelity data."""
    if data.n_h == 0:
        return np.array([False, True, True, False, False])
    return np.ones(5, dtype=bool)


def search_bounds(length_scale: float) -> List[Tuple[Optional[float], Optional[float]]]:
    log_ell = math.log(length_scale)
    log_sigma = (log_ell - LOG_SIGMA_DECADES * math.log(10.0), log_ell + LOG_SIGMA_DECADES * math.log(10.0))
    return [(None, None), S_BOUNDS, log_sigma, S_BOUNDS, log_sigma]


def initial_hyperparams(index: int, config: OptConfig, length_scale: float) -> Hyperparams:
    """Restart 0 is the default point; later restarts draw from their own seeded stream."""
    log_ell = math.log(length_scale)
    if index == 0:
        return Hyperparams.from_vector([1.0, 0.0, log_ell, 0.0, log_ell])
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, index]))
    rho = config.rho_init_set[index % len(config.rho_init_set)]
    s_l, s_d = rng.uniform(*config.s_init_range, size=2)
    log_sigma_l, log_sigma_d = log_ell + rng.uniform(*config.log_sigma_init_range, size=2)
    return Hyperparams.from_vector([rho, s_l, log_sigma_l, s_d, log_sigma_d])


class _NegativeEvidence:
    """-L and its gradient over the active coordinates; remembers the best fit seen."""

    def __init__(self, data: FidelityDataset, config: OptConfig, base: np.ndarray, mask: np.ndarray):
        self.data = data
        self.config = config
        self.base = base
        self.mask = mask
        self.best: Optional[Tuple[float, FittedModel, np.ndarray]] = None
        self._last = None

    def full_vector(self, z: np.ndarray) -> np.ndarray:
        vector = self.base.copy()
        vector[self.mask] = z
        return vector

    def fit(self, z: np.ndarray) -> Tuple[FittedModel, np.ndarray]:
        """Mode fit and active-coordinate gradient of L at z; the latest point is cached."""
        z = np.asarray(z, dtype=float)
        key = tuple(z)
        if self._last is not None and self._last[0] == key:
            return self._last[1], self._last[2]
        hyper = Hyperparams.from_vector(self.full_vector(z))
        model = fit_mode(self.data, hyper, self.config.laplace)
        gradient = grad_hyper(model).as_vector(hyper)[self.mask]
        value = model.log_marginal
        if not (math.isfinite(value) and np.all(np.isfinite(gradient))):
            raise OptimizationError(f"non-finite marginal likelihood at {hyper}")
        if self.best is None or value > self.best[0]:
            self.best = (value, model, z.copy())
        self._last = (key, model, gradient)
        return model, gradient

    def evaluate(self, z: np.ndarray) -> Tuple[float, np.ndarray]:
        model, gradient = self.fit(z)
        return -model.log_marginal, -gradient

    def value_at(self, z: np.ndarray) -> float:
        return self.fit(z)[0].log_marginal


def projected_gradient(gradient: np.ndarray, z: np.ndarray, bounds) -> np.ndarray:
    """Ascent gradient with components pointing out of an active bound zeroed."""
    projected = np.array(gradient, dtype=float)
    for i, (lo, hi) in enumerate(bounds):
        if lo is not None and np.isclose(z[i], lo, rtol=0.0, atol=1e-8) and projected[i] < 0:
            projected[i] = 0.0
        if hi is not None and np.isclose(z[i], hi, rtol=0.0, atol=1e-8) and projected[i] > 0:
            projected[i] = 0.0
    return projected


def _run_restart(data: FidelityDataset, config: OptConfig, index: int, length_scale: float):
    mask = active_mask(data)
    start = initial_hyperparams(index, config, length_scale).to_vector()
    # frozen coordinates sit at the default point
    start[~mask] = initial_hyperparams(0, config, length_scale).to_vector()[~mask]
    initial = Hyperparams.from_vector(start)
    outcome = RestartOutcome(index=index, initial=initial)
    bounds = [b for b, active in zip(search_bounds(length_scale), mask) if active]
    z0 = np.array([
        np.clip(v, lo if lo is not None else -np.inf, hi if hi is not None else np.inf)
        for v, (lo, hi) in zip(start[mask], bounds)
    ])
    objective = _NegativeEvidence(data, config, start, mask)
    tol = config.laplace.tol

    def record_step(zk):
        value = objective.value_at(zk)
        if outcome.trace and value < outcome.trace[-1] - tol * max(1.0, abs(value)):
            raise OptimizationError(
                f"restart {index}: accepted step decreased L from {outcome.trace[-1]:.10g} to {value:.10g}"
            )
        outcome.trace.append(value)
        logger.debug("restart %d step %d: L=%.10g", index, len(outcome.trace) - 1, value)

    def ascend(z_start):
        return minimize(
            objective.evaluate,
            z_start,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            callback=record_step,
            options={"maxiter": config.max_steps, "gtol": config.grad_tol, "ftol": config.step_tol},
        )

    model, z_final = None, None
    try:
        outcome.initial_L = objective.value_at(z0)
        outcome.trace.append(outcome.initial_L)
        result = ascend(z0)
        steps = int(result.nit)
        best_L, _, best_z = objective.best
        if best_L > objective.value_at(result.x) + tol:
            # a line-search trial point beat the final iterate: continue from it
            logger.info("restart %d: resuming from trial point with L=%.10g", index, best_L)
            result = ascend(best_z)
            steps += int(result.nit)
        z_final = np.asarray(result.x, dtype=float)
        model = objective.fit(z_final)[0]
        outcome.steps = steps
        outcome.status = "converged" if result.success else "stopped"
        outcome.message = str(result.message)
    except MfgpcError as exc:
        outcome.status = "aborted" if objective.best is not None else "failed"
        outcome.message = str(exc)
        logger.warning("restart %d %s: %s", index, outcome.status, exc)
        if objective.best is not None:
            _, model, z_final = objective.best

    if model is None:
        return outcome, None
    outcome.final = model.hyper
    outcome.final_L = model.log_marginal
    gradient = grad_hyper(model).as_vector(model.hyper)[mask]
    outcome.grad_norm = float(np.max(np.abs(projected_gradient(gradient, z_final, bounds))))
    return outcome, model


def search(data: FidelityDataset, config: Optional[OptConfig] = None) -> SearchResult:
    """Run every restart and keep the highest L; ties go to the lowest restart index."""
    config = config or OptConfig()
    data.validate_for_fit(config.laplace.require_both_classes)
    length_scale = median_distance(data.X_all)
    indices = list(range(config.restarts))

    if config.jobs > 1 and config.restarts > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(
                _run_restart,
                [data] * len(indices), [config] * len(indices), indices, [length_scale] * len(indices),
            ))
    else:
        results = [_run_restart(data, config, i, length_scale) for i in indices]

    outcomes = [outcome for outcome, _ in results]
    for outcome in outcomes:
        logger.info("restart %d: %s, L %s -> %s in %d steps", outcome.index, outcome.status,
                    outcome.initial_L, outcome.final_L, outcome.steps)

    candidates = [(outcome.final_L, -outcome.index, model) for outcome, model in results if model is not None]
    if not candidates:
        raise OptimizationError("every optimizer restart failed", restarts=outcomes)
    best_L, neg_index, model = max(candidates, key=lambda c: (c[0], c[1]))
    logger.info("selected restart %d with L=%.10g (rho=%.6g)", -neg_index, best_L, model.hyper.rho)
    return SearchResult(model=model, restarts=outcomes, best_index=-neg_index)


def optimize(data: FidelityDataset, config: Optional[OptConfig] = None) -> FittedModel:
    return search(data, config).model
