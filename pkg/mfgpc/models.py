import hashlib
import math
from dataclasses import dataclass
from typing import ClassVar, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .config import settings
from .errors import InputError


class RbfParams(BaseModel):
    """Isotropic RBF parameters: k(x, x') = exp(s) * exp(-|x - x'|^2 / (2 sigma^2))."""

    model_config = ConfigDict(frozen=True)

    s: float = 0.0
    sigma: float = Field(default=1.0, gt=0)

    @field_validator("s", "sigma")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("kernel parameters must be finite")
        return value

    @property
    def log_sigma(self) -> float:
        return math.log(self.sigma)

    @property
    def amplitude(self) -> float:
        return math.exp(self.s)

    @classmethod
    def from_log(cls, s: float, log_sigma: float) -> "RbfParams":
        return cls(s=float(s), sigma=math.exp(float(log_sigma)))


class Hyperparams(BaseModel):
    model_config = ConfigDict(frozen=True)

    rho: float = 1.0
    theta_l: RbfParams = Field(default_factory=RbfParams)
    theta_d: RbfParams = Field(default_factory=RbfParams)

    @field_validator("rho")
    @classmethod
    def _finite_rho(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("rho must be finite")
        return value

    # Unconstrained coordinates used by the optimizer
    VECTOR_NAMES: ClassVar[Tuple[str, ...]] = ("rho", "s_l", "log_sigma_l", "s_d", "log_sigma_d")

    def to_vector(self) -> np.ndarray:
        return np.array([
            self.rho,
            self.theta_l.s, self.theta_l.log_sigma,
            self.theta_d.s, self.theta_d.log_sigma,
        ])

    @classmethod
    def from_vector(cls, vector) -> "Hyperparams":
        rho, s_l, log_sigma_l, s_d, log_sigma_d = (float(v) for v in vector)
        return cls(
            rho=rho,
            theta_l=RbfParams.from_log(s_l, log_sigma_l),
            theta_d=RbfParams.from_log(s_d, log_sigma_d),
        )


class LaplaceConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    tol: float = Field(default_factory=lambda: settings.NEWTON_TOL, gt=0)
    max_iters: int = Field(default_factory=lambda: settings.NEWTON_MAX_ITERS, ge=1)
    max_halvings: int = Field(default_factory=lambda: settings.NEWTON_MAX_HALVINGS, ge=0)
    jitter: float = Field(default_factory=lambda: settings.JITTER, ge=0)
    max_jitter: float = Field(default_factory=lambda: settings.MAX_JITTER, gt=0)
    # Fit-time rule: every non-empty fidelity holds both classes
    require_both_classes: bool = True


class OptConfig(BaseModel):
    restarts: int = Field(default_factory=lambda: settings.OPT_RESTARTS, ge=1)
    max_steps: int = Field(default_factory=lambda: settings.OPT_MAX_STEPS, ge=1)
    step_tol: float = Field(default_factory=lambda: settings.OPT_STEP_TOL, gt=0)
    grad_tol: float = Field(default_factory=lambda: settings.OPT_GRAD_TOL, gt=0)
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED)
    rho_init_set: List[float] = Field(default_factory=lambda: [1.0, 0.5, -1.0], min_length=1)
    # Offsets around log(median pairwise distance)
    log_sigma_init_range: Tuple[float, float] = (math.log(0.1), math.log(10.0))
    s_init_range: Tuple[float, float] = (-1.0, 3.0)
    laplace: LaplaceConfig = Field(default_factory=LaplaceConfig)
    jobs: int = Field(default=1, ge=1)

    @field_validator("log_sigma_init_range", "s_init_range")
    @classmethod
    def _ordered(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = value
        if not lo <= hi:
            raise ValueError(f"empty range {value}")
        return value


class McmcConfig(BaseModel):
    n_samples: int = Field(default_factory=lambda: settings.MCMC_SAMPLES, ge=1)
    burn_in: int = Field(default_factory=lambda: settings.MCMC_BURN_IN, ge=0)
    thin: int = Field(default_factory=lambda: settings.MCMC_THIN, ge=1)
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED)
    max_shrinks: int = Field(default=200, ge=1)
    quadrature_degree: int = Field(default=32, ge=2)

    @model_validator(mode="after")
    def _burn_in_below_samples(self) -> "McmcConfig":
        if not self.n_samples > self.burn_in:
            raise ValueError("n_samples must exceed burn_in")
        return self


class SynthesisSpec(BaseModel):
    dim: int = Field(default=2, ge=1)
    n_low: int = Field(default=225, ge=1)
    n_high: int = Field(default=75, ge=1)
    n_test: int = Field(default=1000, ge=1)
    noise_level: float = Field(default=0.2, ge=0, lt=0.5)
    kernel_l: Optional[RbfParams] = None
    kernel_d: Optional[RbfParams] = None
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED)
    bernoulli_labels: bool = False
    probe_size: int = Field(default_factory=lambda: settings.PROBE_SIZE, ge=16)
    noise_tolerance: float = Field(default=0.02, gt=0)

    def resolved_kernels(self) -> Tuple[RbfParams, RbfParams]:
        # Length-scale grows with sqrt(dim) so typical pair distances stay comparable
        default = RbfParams(s=0.0, sigma=0.25 * math.sqrt(self.dim))
        return self.kernel_l or default, self.kernel_d or default


class BenchmarkProtocol(BaseModel):
    n_high: int = Field(default=75, ge=1)
    lf_ratio: float = Field(default=3.0, ge=0)
    runs: int = Field(default=3, ge=1)
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED)
    test_size: Optional[int] = Field(default=None, ge=2)
    standardize: bool = True
    max_resample: int = Field(default=100, ge=1)
    jobs: int = Field(default=1, ge=1)

    @property
    def n_low(self) -> int:
        return int(round(self.n_high * self.lf_ratio))


class PredictionScore(BaseModel):
    latent_mean: float
    probability: float = Field(ge=0, le=1)
    label: int = Field(ge=0, le=1)


class RunRecord(BaseModel):
    dataset_id: str
    method: str
    seed: int
    roc_auc: float = Field(ge=0, le=1)
    n_low: int = Field(ge=0)
    n_high: int = Field(ge=0)
    noise_level: float = 0.0
    wall_time: float = 0.0


def _as_matrix(X, dim: Optional[int], name: str) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return np.empty((0, dim if dim is not None else 0))
    if X.ndim == 1:
        X = X.reshape(-1, 1) if dim in (None, 1) else X.reshape(1, -1)
    if X.ndim != 2:
        raise InputError(f"{name} must be a 2-D feature matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError(f"{name} contains non-finite values")
    return X


def _as_labels(y, n: int, name: str) -> np.ndarray:
    y = np.asarray(y)
    if y.size == 0:
        y = np.empty(0, dtype=int)
    y = y.reshape(-1)
    if y.shape[0] != n:
        raise InputError(f"{name} has {y.shape[0]} labels for {n} points")
    if not np.all((y == 0) | (y == 1)):
        raise InputError(f"{name} labels must be 0 or 1")
    return y.astype(int)


@dataclass(frozen=True)
class FidelityDataset:
    """Low- and high-fidelity training samples sharing one feature space."""

    X_L: np.ndarray
    y_L: np.ndarray
    X_H: np.ndarray
    y_H: np.ndarray

    def __post_init__(self):
        X_L = np.asarray(self.X_L, dtype=float)
        X_H = np.asarray(self.X_H, dtype=float)
        dim = next((X.shape[1] for X in (X_L, X_H) if X.ndim == 2 and X.shape[1] > 0), None)
        X_L = _as_matrix(X_L, dim, "X_L")
        X_H = _as_matrix(X_H, dim, "X_H")
        if X_L.shape[1] != X_H.shape[1]:
            raise InputError(
                f"feature dimensionality differs between fidelities: {X_L.shape[1]} vs {X_H.shape[1]}"
            )
        object.__setattr__(self, "X_L", X_L)
        object.__setattr__(self, "X_H", X_H)
        object.__setattr__(self, "y_L", _as_labels(self.y_L, X_L.shape[0], "y_L"))
        object.__setattr__(self, "y_H", _as_labels(self.y_H, X_H.shape[0], "y_H"))

    @property
    def n_l(self) -> int:
        return self.X_L.shape[0]

    @property
    def n_h(self) -> int:
        return self.X_H.shape[0]

    @property
    def dim(self) -> int:
        return self.X_L.shape[1]

    @property
    def latent_size(self) -> int:
        return self.n_l + 2 * self.n_h

    @property
    def X_all(self) -> np.ndarray:
        """Inputs of the low-fidelity process, ordered [X_L; X_H]."""
        return np.vstack([self.X_L, self.X_H])

    def validate_for_fit(self, require_both_classes: bool = True) -> None:
        if self.n_l + self.n_h == 0:
            raise InputError("dataset has no training points")
        if not require_both_classes:
            return
        for name, y in (("low", self.y_L), ("high", self.y_H)):
            if y.size and np.unique(y).size < 2:
                raise InputError(
                    f"{name}-fidelity labels must contain at least one label of each class"
                )

    def flipped(self) -> "FidelityDataset":
        return FidelityDataset(self.X_L, 1 - self.y_L, self.X_H, 1 - self.y_H)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for array in (self.X_L, self.y_L.astype(np.int64), self.X_H, self.y_H.astype(np.int64)):
            digest.update(np.ascontiguousarray(array).tobytes())
            digest.update(str(array.shape).encode())
        return digest.hexdigest()


@dataclass(frozen=True)
class SfDataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = _as_matrix(self.X, None, "X")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", _as_labels(self.y, X.shape[0], "y"))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def as_fidelity(self) -> FidelityDataset:
        """Single-fidelity data occupies the low-fidelity slot; the high-fidelity sample is empty."""
        return FidelityDataset(self.X, self.y, np.empty((0, self.dim)), np.empty(0, dtype=int))


class GroundTruth(BaseModel):
    """Generation record: the coupling found by bisection and the latents at every pool point."""

    spec: SynthesisSpec
    rho: float
    disagreement: float = Field(ge=0, le=1)
    f_low: List[float]
    delta: List[float]

    def f_high(self) -> np.ndarray:
        return self.rho * np.asarray(self.f_low) + np.asarray(self.delta)


class RunConfig(BaseModel):
    """Sections of a JSON config file; command-line flags override these values."""

    model_config = ConfigDict(extra="forbid")

    laplace: LaplaceConfig = Field(default_factory=LaplaceConfig)
    opt: OptConfig = Field(default_factory=OptConfig)
    mcmc: McmcConfig = Field(default_factory=McmcConfig)
    synthesis: SynthesisSpec = Field(default_factory=SynthesisSpec)
    protocol: BenchmarkProtocol = Field(default_factory=BenchmarkProtocol)
