"""Single-fidelity Laplace GPC baseline.

A single-fidelity problem is the multi-fidelity one with an empty
high-fidelity sample, so every operation here delegates to ``laplace``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .hyperopt import search
from .laplace import FittedModel, fit_mode, predict, predict_latent
from .models import Hyperparams, LaplaceConfig, OptConfig, RbfParams, SfDataset


@dataclass(frozen=True)
class SfModel:
    data: SfDataset
    params: RbfParams
    inner: FittedModel

    @property
    def mode(self) -> np.ndarray:
        return self.inner.xi_hat.values

    @property
    def alpha(self) -> np.ndarray:
        return self.inner.alpha

    @property
    def log_marginal(self) -> float:
        return self.inner.log_marginal

    @property
    def newton_iters(self) -> int:
        return self.inner.newton_iters


def _hyper(params: RbfParams) -> Hyperparams:
    return Hyperparams(rho=1.0, theta_l=params, theta_d=params)


def sf_fit(data: SfDataset, params: RbfParams, config: Optional[LaplaceConfig] = None) -> SfModel:
    inner = fit_mode(data.as_fidelity(), _hyper(params), config)
    return SfModel(data=data, params=params, inner=inner)


def sf_predict_latent(model: SfModel, X_star) -> np.ndarray:
    return predict_latent(model.inner, X_star)


def sf_predict(model: SfModel, X_star) -> list:
    return predict(model.inner, X_star)


def sf_optimize(data: SfDataset, config: Optional[OptConfig] = None) -> SfModel:
    """Multi-restart search over (s, log sigma); the coupling coordinates stay frozen."""
    result = search(data.as_fidelity(), config)
    params = result.model.hyper.theta_l
    return SfModel(data=data, params=params, inner=result.model)
