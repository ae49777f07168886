"""Metrics and experiment runners: ROC AUC, AUC profiles, benchmark protocol, budget sweeps, sensitivity grids."""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata
from sklearn.preprocessing import StandardScaler

from .datagen import LabelPool, budget_sizes, sample_indices
from .errors import InputError, MfgpcError, UndefinedMetricError
from .hyperopt import optimize
from .laplace import FittedModel, fit_mode, predict_latent
from .models import BenchmarkProtocol, FidelityDataset, Hyperparams, OptConfig, RbfParams, RunRecord, SfDataset
from .single_fidelity import sf_optimize, sf_predict_latent
from .storage import read_table

logger = logging.getLogger(__name__)

RUN_COLUMNS = ("dataset_id", "method", "seed", "roc_auc", "n_low", "n_high", "noise_level")


def roc_auc(scores, labels) -> float:
    """Mann-Whitney statistic with ties counted one half."""
    scores = np.asarray(scores, dtype=float).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise InputError(f"{scores.shape[0]} scores for {labels.shape[0]} labels")
    positive = labels == 1
    n_pos = int(np.sum(positive))
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC AUC needs both classes among the labels")
    ranks = rankdata(scores)
    u_statistic = float(np.sum(ranks[positive])) - n_pos * (n_pos + 1) / 2.0
    return u_statistic / (n_pos * n_neg)


def auc_profile(records: Sequence[RunRecord], thresholds) -> Dict[str, np.ndarray]:
    """Per method, the share of runs whose ROC AUC exceeds each threshold."""
    if not records:
        raise InputError("no run records to profile")
    thresholds = np.asarray(thresholds, dtype=float)
    by_method: Dict[str, List[float]] = {}
    for record in records:
        by_method.setdefault(record.method, []).append(record.roc_auc)
    return {
        method: np.mean(np.asarray(aucs)[:, None] > thresholds[None, :], axis=0)
        for method, aucs in sorted(by_method.items())
    }


@dataclass(frozen=True)
class BenchmarkDataset:
    dataset_id: str
    pool: LabelPool
    noise_level: float = 0.0


@dataclass(frozen=True)
class BenchmarkTask:
    """One train/test split handed to a method."""

    dataset_id: str
    train: FidelityDataset
    X_test: np.ndarray
    test_ids: np.ndarray
    opt: OptConfig


@dataclass(frozen=True)
class FailureRecord:
    dataset_id: str
    method: str
    seed: int
    message: str


@dataclass
class BenchmarkReport:
    records: List[RunRecord] = field(default_factory=list)
    failures: List[FailureRecord] = field(default_factory=list)


def _mf_gpc(task: BenchmarkTask) -> np.ndarray:
    return predict_latent(optimize(task.train, task.opt), task.X_test)


def _sf_gpc(task: BenchmarkTask) -> np.ndarray:
    train = task.train
    model = sf_optimize(SfDataset(train.X_H, train.y_H), task.opt)
    return sf_predict_latent(model, task.X_test)


def _concatenated_gpc(task: BenchmarkTask) -> np.ndarray:
    train = task.train
    model = sf_optimize(SfDataset(train.X_all, np.concatenate([train.y_L, train.y_H])), task.opt)
    return sf_predict_latent(model, task.X_test)


def _stacked_gpc(task: BenchmarkTask) -> np.ndarray:
    """Low-fidelity classifier probabilities become an extra feature for the high-fidelity classifier."""
    train = task.train
    low_model = sf_optimize(SfDataset(train.X_L, train.y_L), task.opt)
    low_train = expit(sf_predict_latent(low_model, train.X_H))
    low_test = expit(sf_predict_latent(low_model, task.X_test))
    model = sf_optimize(SfDataset(np.column_stack([train.X_H, low_train]), train.y_H), task.opt)
    return sf_predict_latent(model, np.column_stack([task.X_test, low_test]))


METHODS: Dict[str, Callable[[BenchmarkTask], np.ndarray]] = {
    "mf-gpc": _mf_gpc,
    "gpc": _sf_gpc,
    "c-gpc": _concatenated_gpc,
    "s-gpc": _stacked_gpc,
}


class ScoreFile:
    """External scores keyed by (dataset_id, point_id)."""

    def __init__(self, path):
        self.path = Path(path)
        self.scores: Dict[Tuple[str, int], float] = {}
        for row_no, row in enumerate(read_table(self.path), start=1):
            try:
                key = (row["dataset_id"], int(row["point_id"]))
                self.scores[key] = float(row["score"])
            except (KeyError, TypeError, ValueError) as exc:
                raise InputError(f"{self.path}: bad score row {row_no}: {exc}") from exc

    def __call__(self, task: BenchmarkTask) -> np.ndarray:
        try:
            return np.array([self.scores[(task.dataset_id, int(i))] for i in task.test_ids])
        except KeyError as exc:
            raise InputError(f"{self.path} has no score for point {exc.args[0]}") from None


def resolve_methods(names: Sequence[str], score_files: Optional[Mapping[str, Union[str, Path]]] = None):
    score_files = dict(score_files or {})
    resolved = {}
    for name in names:
        if name in METHODS:
            resolved[name] = METHODS[name]
        elif name in score_files:
            resolved[name] = ScoreFile(score_files[name])
        else:
            known = ", ".join(sorted(set(METHODS) | set(score_files)))
            raise InputError(f"unknown method {name!r}; registered methods: {known}")
    return resolved


def run_seed(master_seed: int, run: int) -> int:
    """Per-run seed shared by every dataset and method in that run."""
    return int(np.random.SeedSequence([master_seed, run]).generate_state(1)[0])


def split_pool(pool: LabelPool, n_low: int, n_high: int, seed: int, max_resample: int,
               test_size: Optional[int] = None):
    """Disjoint high/low training indices plus the remaining points as the test set."""
    lo_idx, hi_idx, rest = sample_indices(pool, n_low, n_high, seed, max_resample)
    if test_size is not None:
        rest = rest[:test_size]
    if rest.size == 0:
        raise InputError("no pool points left for the test set")
    train = FidelityDataset(pool.X[lo_idx], pool.y_low[lo_idx], pool.X[hi_idx], pool.y_high[hi_idx])
    return train, rest


def _standardize(train: FidelityDataset, X_test: np.ndarray) -> Tuple[FidelityDataset, np.ndarray]:
    scaler = StandardScaler().fit(train.X_all)
    return (
        FidelityDataset(
            scaler.transform(train.X_L) if train.n_l else train.X_L,
            train.y_L,
            scaler.transform(train.X_H) if train.n_h else train.X_H,
            train.y_H,
        ),
        scaler.transform(X_test),
    )


def _score_methods(dataset_id, train, X_test, y_test, test_ids, methods, opt, seed, noise_level):
    records, failures = [], []
    task = BenchmarkTask(dataset_id, train, X_test, test_ids, opt)
    for name, method in methods.items():
        started = time.perf_counter()
        try:
            auc = roc_auc(method(task), y_test)
        except MfgpcError as exc:
            logger.warning("%s / %s / seed %d failed: %s", dataset_id, name, seed, exc)
            failures.append(FailureRecord(dataset_id, name, seed, str(exc)))
            continue
        records.append(RunRecord(
            dataset_id=dataset_id,
            method=name,
            seed=seed,
            roc_auc=auc,
            n_low=train.n_l,
            n_high=train.n_h,
            noise_level=noise_level,
            wall_time=time.perf_counter() - started,
        ))
    return records, failures


def _benchmark_cell(dataset: BenchmarkDataset, run: int, method_names, score_files, protocol, opt):
    seed = run_seed(protocol.seed, run)
    methods = resolve_methods(method_names, score_files)
    try:
        train, test_ids = split_pool(dataset.pool, protocol.n_low, protocol.n_high, seed,
                                     protocol.max_resample, protocol.test_size)
    except MfgpcError as exc:
        logger.warning("%s / seed %d: cannot split pool: %s", dataset.dataset_id, seed, exc)
        return [], [FailureRecord(dataset.dataset_id, name, seed, str(exc)) for name in method_names]

    X_test = dataset.pool.X[test_ids]
    if protocol.standardize:
        train, X_test = _standardize(train, X_test)
    run_opt = opt.model_copy(update={"seed": seed, "jobs": 1})
    return _score_methods(dataset.dataset_id, train, X_test, dataset.pool.y_high[test_ids], test_ids,
                          methods, run_opt, seed, dataset.noise_level)


def run_benchmark(
    datasets: Sequence[BenchmarkDataset],
    methods: Sequence[str],
    protocol: Optional[BenchmarkProtocol] = None,
    opt: Optional[OptConfig] = None,
    score_files: Optional[Mapping[str, Union[str, Path]]] = None,
) -> BenchmarkReport:
    """Every dataset x run x method; a failing method is recorded, not fatal."""
    protocol = protocol or BenchmarkProtocol()
    opt = opt or OptConfig()
    resolve_methods(methods, score_files)
    cells = [(dataset, run) for dataset in datasets for run in range(protocol.runs)]

    if protocol.jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=protocol.jobs) as pool:
            futures = [
                pool.submit(_benchmark_cell, dataset, run, list(methods), score_files, protocol, opt)
                for dataset, run in cells
            ]
            results = [future.result() for future in futures]
    else:
        results = [_benchmark_cell(dataset, run, list(methods), score_files, protocol, opt)
                   for dataset, run in cells]

    report = BenchmarkReport()
    for records, failures in results:
        report.records.extend(records)
        report.failures.extend(failures)
    logger.info("benchmark finished: %d records, %d failures", len(report.records), len(report.failures))
    return report


def mean_auc(records: Sequence[RunRecord]) -> Dict[Tuple[str, str], float]:
    """Arithmetic mean ROC AUC per (dataset_id, method)."""
    groups: Dict[Tuple[str, str], List[float]] = {}
    for record in records:
        groups.setdefault((record.dataset_id, record.method), []).append(record.roc_auc)
    return {key: float(np.mean(values)) for key, values in sorted(groups.items())}


@dataclass(frozen=True)
class BudgetCell:
    noise_level: float
    lf_cost_fraction: float
    hf_share: float
    method: str
    n_low: int
    n_high: int
    runs: int
    mean_auc: Optional[float]
    std_error: Optional[float]
    note: str = ""


def _summarize(aucs: List[float]) -> Tuple[Optional[float], Optional[float]]:
    if not aucs:
        return None, None
    values = np.asarray(aucs)
    if values.size == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


PoolSource = Union[Callable[[float], LabelPool], Mapping[float, LabelPool]]


def budget_sweep(
    source: PoolSource,
    hf_shares: Sequence[float],
    lf_cost_fractions: Sequence[float] = (0.125, 0.25, 0.5),
    noise_levels: Sequence[float] = (0.0, 0.2, 0.3, 0.4),
    runs: int = 10,
    seed: int = 0,
    budget: float = 100.0,
    opt: Optional[OptConfig] = None,
    test_size: Optional[int] = None,
    standardize: bool = True,
    max_resample: int = 100,
) -> List[BudgetCell]:
    """Mean ROC AUC of MF-GPC per (noise, LF cost, HF share) cell plus the all-HF SF-GPC reference.

    ``source`` maps a noise level to a labelled pool (a callable or a mapping).
    """
    opt = opt or OptConfig()
    if isinstance(source, Mapping):
        noise_levels = list(source.keys())
        get_pool = source.__getitem__
    else:
        get_pool = source

    cells: List[BudgetCell] = []
    for noise in noise_levels:
        pool = get_pool(noise)
        cache: Dict[Tuple[str, int, int, int], float] = {}

        def evaluate(method_name: str, n_low: int, n_high: int) -> Tuple[List[float], str]:
            aucs, notes = [], []
            for run in range(runs):
                key = (method_name, n_low, n_high, run)
                if key not in cache:
                    s = run_seed(seed, run)
                    train, test_ids = split_pool(pool, n_low, n_high, s, max_resample, test_size)
                    X_test = pool.X[test_ids]
                    if standardize:
                        train, X_test = _standardize(train, X_test)
                    task = BenchmarkTask(f"noise={noise}", train, X_test, test_ids,
                                         opt.model_copy(update={"seed": s, "jobs": 1}))
                    try:
                        cache[key] = roc_auc(METHODS[method_name](task), pool.y_high[test_ids])
                    except MfgpcError as exc:
                        notes.append(f"run {run}: {exc}")
                        continue
                aucs.append(cache[key])
            return aucs, "; ".join(notes)

        for lf_cost in lf_cost_fractions:
            for share in hf_shares:
                n_low, n_high = budget_sizes(budget, share, lf_cost)
                try:
                    aucs, note = evaluate("mf-gpc", n_low, n_high)
                except InputError as exc:
                    logger.info("skipping infeasible cell noise=%s cost=%s share=%s: %s", noise, lf_cost, share, exc)
                    cells.append(BudgetCell(noise, lf_cost, share, "mf-gpc", n_low, n_high, 0, None, None,
                                            f"infeasible: {exc}"))
                    continue
                mean, err = _summarize(aucs)
                cells.append(BudgetCell(noise, lf_cost, share, "mf-gpc", n_low, n_high, len(aucs), mean, err, note))

        n_ref = int(math.floor(budget + 0.5))
        try:
            aucs, note = evaluate("gpc", 0, n_ref)
            mean, err = _summarize(aucs)
            cells.append(BudgetCell(noise, 1.0, 1.0, "gpc", 0, n_ref, len(aucs), mean, err, note))
        except InputError as exc:
            cells.append(BudgetCell(noise, 1.0, 1.0, "gpc", 0, n_ref, 0, None, None, f"infeasible: {exc}"))
    return cells


@dataclass(frozen=True)
class SensitivityPoint:
    axis: str
    value: Tuple[float, ...]
    roc_auc: Optional[float]
    tuned: bool
    note: str = ""


SENSITIVITY_AXES = ("rho", "theta_l", "theta_d")


def _vary(hyper: Hyperparams, axis: str, value) -> Hyperparams:
    if axis == "rho":
        return hyper.model_copy(update={"rho": float(value)})
    s, sigma = value
    return hyper.model_copy(update={axis: RbfParams(s=float(s), sigma=float(sigma))})


def _axis_value(hyper: Hyperparams, axis: str) -> Tuple[float, ...]:
    if axis == "rho":
        return (hyper.rho,)
    params = getattr(hyper, axis)
    return (params.s, params.sigma)


def sensitivity_grid(model: FittedModel, validation: SfDataset, axis: str, grid) -> List[SensitivityPoint]:
    """Validation ROC AUC with one hyperparameter group varied and the mode refitted.

    ``grid`` holds rho values for the rho axis and (s, sigma) pairs for a kernel axis.
    """
    if axis not in SENSITIVITY_AXES:
        raise InputError(f"axis must be one of {', '.join(SENSITIVITY_AXES)}, got {axis!r}")
    points = []
    for value in grid:
        try:
            hyper = _vary(model.hyper, axis, value)
        except (TypeError, ValueError) as exc:
            raise InputError(f"bad grid value {value!r} for axis {axis}: {exc}") from exc
        tuned = hyper == model.hyper
        coordinates = _axis_value(hyper, axis)
        try:
            fitted = model if tuned else fit_mode(model.data, hyper, model.config)
            auc = roc_auc(predict_latent(fitted, validation.X), validation.y)
        except MfgpcError as exc:
            logger.warning("sensitivity point %s=%s failed: %s", axis, coordinates, exc)
            points.append(SensitivityPoint(axis, coordinates, None, tuned, str(exc)))
            continue
        points.append(SensitivityPoint(axis, coordinates, auc, tuned))
    return points
