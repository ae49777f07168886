"""Synthetic data under the co-kriging model, label noise, dataset files and budgeted subsampling."""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy.special import expit

from .config import settings
from .errors import DatasetParseError, GenerationError, InputError
from .kernels import kernel_matrix
from .linalg import jitchol
from .models import FidelityDataset, GroundTruth, SfDataset, SynthesisSpec
from .storage import provenance_lines

logger = logging.getLogger(__name__)

FIDELITY_NAMES = ("low", "high")
MAX_BISECTION_STEPS = 200
MAX_BRACKET_DOUBLINGS = 60


@dataclass(frozen=True)
class LabelPool:
    """Points carrying both a high-fidelity and a low-fidelity label."""

    X: np.ndarray
    y_high: np.ndarray
    y_low: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class GeneratedData:
    dataset: FidelityDataset
    test: SfDataset
    truth: GroundTruth
    pool: LabelPool


def disagreement_rate(f_low: np.ndarray, delta: np.ndarray, rho: float) -> float:
    """Share of points where 1[f_L > 0] and 1[rho f_L + delta > 0] differ."""
    return float(np.mean((f_low > 0) != (rho * f_low + delta > 0)))


def _draw_latent(rng: np.random.Generator, params, X: np.ndarray) -> np.ndarray:
    factor = jitchol(kernel_matrix(params, X, X))
    return factor.chol @ rng.standard_normal(X.shape[0])


def _solve_rho(f_low: np.ndarray, delta: np.ndarray, target: float, tolerance: float) -> Tuple[float, float]:
    """Bisection on rho >= 0; the disagreement rate is non-increasing in rho."""
    lo, hi = 0.0, 1.0
    rate_lo = disagreement_rate(f_low, delta, lo)
    if rate_lo < target - tolerance:
        raise GenerationError(
            f"largest reachable disagreement is {rate_lo:.3f} < {target}; "
            "increase the residual kernel amplitude"
        )
    if abs(rate_lo - target) <= tolerance:
        return lo, rate_lo

    for _ in range(MAX_BRACKET_DOUBLINGS):
        if disagreement_rate(f_low, delta, hi) <= target + tolerance:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise GenerationError(
            f"disagreement stays above {target + tolerance} for rho up to {hi:.3g}; "
            "decrease the residual kernel amplitude"
        )

    for _ in range(MAX_BISECTION_STEPS):
        rate_hi = disagreement_rate(f_low, delta, hi)
        if abs(rate_hi - target) <= tolerance:
            return hi, rate_hi
        mid = 0.5 * (lo + hi)
        rate_mid = disagreement_rate(f_low, delta, mid)
        if abs(rate_mid - target) <= tolerance:
            return mid, rate_mid
        if rate_mid > target:
            lo = mid
        else:
            hi = mid
    raise GenerationError(
        f"no rho reaches disagreement {target} within {tolerance}; the probe set is too coarse, "
        "change the kernel amplitudes or the probe size"
    )


def _labels(rng: np.random.Generator, latent: np.ndarray, bernoulli: bool) -> np.ndarray:
    if bernoulli:
        return (rng.random(latent.shape[0]) < expit(latent)).astype(int)
    return (latent > 0).astype(int)


def generate_synthetic(spec: SynthesisSpec) -> GeneratedData:
    """Draw f_L and delta jointly at the pool and probe points, then fit rho to the target noise."""
    rng = np.random.default_rng(spec.seed)
    kernel_l, kernel_d = spec.resolved_kernels()
    n_pool = spec.n_low + spec.n_high + spec.n_test

    X_pool = rng.uniform(size=(n_pool, spec.dim))
    X_probe = rng.uniform(size=(spec.probe_size, spec.dim))
    X = np.vstack([X_pool, X_probe])
    f_low = _draw_latent(rng, kernel_l, X)
    delta = _draw_latent(rng, kernel_d, X)

    rho, achieved = _solve_rho(f_low[n_pool:], delta[n_pool:], spec.noise_level, spec.noise_tolerance)
    logger.info("generated latents with rho=%.6g, probe disagreement %.4f (target %.3f)",
                rho, achieved, spec.noise_level)

    f_low_pool = f_low[:n_pool]
    delta_pool = delta[:n_pool]
    f_high_pool = rho * f_low_pool + delta_pool
    y_low = _labels(rng, f_low_pool, spec.bernoulli_labels)
    y_high = _labels(rng, f_high_pool, spec.bernoulli_labels)

    low = slice(0, spec.n_low)
    high = slice(spec.n_low, spec.n_low + spec.n_high)
    test = slice(spec.n_low + spec.n_high, n_pool)
    dataset = FidelityDataset(X_pool[low], y_low[low], X_pool[high], y_high[high])
    truth = GroundTruth(
        spec=spec,
        rho=rho,
        disagreement=achieved,
        f_low=f_low_pool.tolist(),
        delta=delta_pool.tolist(),
    )
    return GeneratedData(
        dataset=dataset,
        test=SfDataset(X_pool[test], y_high[test]),
        truth=truth,
        pool=LabelPool(X_pool, y_high, y_low),
    )


def inject_flip_noise(labels, p: float, seed: int) -> np.ndarray:
    """Flip each label independently with probability p."""
    if not 0.0 <= p <= 1.0:
        raise InputError(f"flip probability must lie in [0, 1], got {p}")
    labels = np.asarray(labels).astype(int)
    rng = np.random.default_rng(seed)
    flip = rng.random(labels.shape[0]) < p
    return np.where(flip, 1 - labels, labels)


def pool_from_dataset(data: Union[SfDataset, FidelityDataset], p: float, seed: int) -> LabelPool:
    """Take the file's labels as high-fidelity truth and a flip-noised copy as low-fidelity labels."""
    if isinstance(data, FidelityDataset):
        data = SfDataset(data.X_all, np.concatenate([data.y_L, data.y_H]))
    return LabelPool(data.X, data.y, inject_flip_noise(data.y, p, seed))


def save_dataset(data: FidelityDataset, path, provenance: Optional[Dict] = None) -> None:
    fmt = settings.float_format
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        for line in provenance_lines(provenance or {}):
            handle.write(line + "\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([f"x{j + 1}" for j in range(data.dim)] + ["y", "fidelity"])
        for name, X, y in (("low", data.X_L, data.y_L), ("high", data.X_H, data.y_H)):
            for row, label in zip(X, y):
                writer.writerow([format(float(v), fmt) for v in row] + [int(label), name])


def load_dataset(path) -> FidelityDataset:
    path = Path(path)
    rows = {name: ([], []) for name in FIDELITY_NAMES}
    dim = None
    try:
        handle = path.open("r", newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open dataset {path}: {exc}") from exc

    with handle:
        for line_no, line in enumerate(handle, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            fields = next(csv.reader([text]))
            if dim is None:
                if len(fields) < 3 or fields[-2:] != ["y", "fidelity"]:
                    raise DatasetParseError("header must be x1..xd,y,fidelity", str(path), line_no)
                dim = len(fields) - 2
                continue
            if len(fields) != dim + 2:
                raise DatasetParseError(
                    f"expected {dim + 2} columns, found {len(fields)}", str(path), line_no
                )
            try:
                x = [float(v) for v in fields[:dim]]
            except ValueError:
                raise DatasetParseError("feature value is not a number", str(path), line_no) from None
            if not all(math.isfinite(v) for v in x):
                raise DatasetParseError("feature value is not finite", str(path), line_no)
            if fields[dim] not in ("0", "1"):
                raise DatasetParseError(f"label must be 0 or 1, got {fields[dim]!r}", str(path), line_no)
            fidelity = fields[dim + 1].strip().lower()
            if fidelity not in rows:
                raise DatasetParseError(
                    f"fidelity must be 'low' or 'high', got {fields[dim + 1]!r}", str(path), line_no
                )
            rows[fidelity][0].append(x)
            rows[fidelity][1].append(int(fields[dim]))

    if dim is None:
        raise DatasetParseError("missing header row", str(path), 1)

    def block(name):
        X, y = rows[name]
        return np.array(X, dtype=float).reshape(-1, dim), np.array(y, dtype=int)

    X_L, y_L = block("low")
    X_H, y_H = block("high")
    return FidelityDataset(X_L, y_L, X_H, y_H)


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def budget_sizes(budget: float, hf_share: float, lf_cost_fraction: float) -> Tuple[int, int]:
    """(n_low, n_high) for a budget counted in high-fidelity entries."""
    if not 0.0 <= hf_share <= 1.0:
        raise InputError(f"hf_share must lie in [0, 1], got {hf_share}")
    if not 0.0 < lf_cost_fraction <= 1.0:
        raise InputError(f"lf_cost_fraction must lie in (0, 1], got {lf_cost_fraction}")
    n_high = _round_half_up(hf_share * budget)
    n_low = _round_half_up((1.0 - hf_share) * budget / lf_cost_fraction)
    return n_low, n_high


def _has_both_classes(y: np.ndarray) -> bool:
    return y.size == 0 or np.unique(y).size == 2


def sample_indices(pool: LabelPool, n_low: int, n_high: int, seed: int, max_resample: int = 100):
    """Disjoint (low, high, remaining) index arrays; high-fidelity points are drawn first.

    Draws are repeated until each non-empty fidelity holds both classes.
    """
    if n_low + n_high > pool.n:
        raise InputError(f"sample needs {n_low + n_high} points, pool has {pool.n}")
    rng = np.random.default_rng(seed)
    for _ in range(max_resample):
        order = rng.permutation(pool.n)
        hi_idx = order[:n_high]
        lo_idx = order[n_high:n_high + n_low]
        if _has_both_classes(pool.y_high[hi_idx]) and _has_both_classes(pool.y_low[lo_idx]):
            return lo_idx, hi_idx, order[n_high + n_low:]
    raise InputError(f"no subsample with both classes per fidelity after {max_resample} draws")


def budget_subsample(
    data: Union[LabelPool, FidelityDataset],
    budget: float = 100.0,
    hf_share: float = 1.0,
    lf_cost_fraction: float = 0.25,
    seed: int = 0,
    max_resample: int = 100,
) -> FidelityDataset:
    """Sample a training set that spends ``budget`` high-fidelity units.

    From a pool the low-fidelity points come from what the high-fidelity
    draw left over; from a dataset each fidelity is sampled from its own rows.
    """
    n_low, n_high = budget_sizes(budget, hf_share, lf_cost_fraction)

    if isinstance(data, LabelPool):
        lo_idx, hi_idx, _ = sample_indices(data, n_low, n_high, seed, max_resample)
        return FidelityDataset(data.X[lo_idx], data.y_low[lo_idx], data.X[hi_idx], data.y_high[hi_idx])

    if n_high > data.n_h or n_low > data.n_l:
        raise InputError(
            f"budget needs ({n_low}, {n_high}) low/high points, dataset has ({data.n_l}, {data.n_h})"
        )
    rng = np.random.default_rng(seed)
    for _ in range(max_resample):
        hi_idx = rng.choice(data.n_h, size=n_high, replace=False)
        lo_idx = rng.choice(data.n_l, size=n_low, replace=False)
        if _has_both_classes(data.y_H[hi_idx]) and _has_both_classes(data.y_L[lo_idx]):
            return FidelityDataset(data.X_L[lo_idx], data.y_L[lo_idx], data.X_H[hi_idx], data.y_H[hi_idx])
    raise InputError(f"no subsample with both classes per fidelity after {max_resample} draws")
