#!/usr/bin/env python3
"""
mfgpc command line
==================
Generate data, train, predict, evaluate and verify multi-fidelity GP classifiers.

Usage:
    python -m mfgpc [--config FILE] [--seed N] [--jobs N] [--log-level LEVEL] COMMAND [options]

Commands:
    generate      draw a synthetic two-fidelity dataset
    train         tune hyperparameters and write a model file
    predict       score points with a trained model
    evaluate      run the benchmark protocol over datasets and methods
    budget        sweep the high-/low-fidelity budget split
    sensitivity   validation ROC AUC along one hyperparameter axis
    gradcheck     compare analytic and finite-difference gradients
    mcmc-check    compare Laplace predictions with an MCMC posterior

Exit codes: 0 success, 1 failed operation or check, 2 invalid input.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ValidationError

from . import __version__
from .config import settings
from .datagen import generate_synthetic, load_dataset, pool_from_dataset, save_dataset
from .errors import InputError, MfgpcError
from .evalharness import (
    METHODS,
    RUN_COLUMNS,
    BenchmarkDataset,
    auc_profile,
    budget_sweep,
    mean_auc,
    roc_auc,
    run_benchmark,
    sensitivity_grid,
)
from .hyperopt import search
from .laplace import FittedModel, fit_mode, grad_hyper, log_marginal, predict
from .models import FidelityDataset, Hyperparams, RunConfig, SfDataset
from .oracles import finite_diff_gradient, mcmc_posterior_predict
from .single_fidelity import SfModel, sf_optimize
from .storage import (
    load_model,
    load_run_config,
    provenance,
    save_ground_truth,
    save_model,
    write_table,
)

logger = logging.getLogger(__name__)

PROFILE_THRESHOLDS = np.round(np.linspace(0.5, 1.0, 51), 2)


def _override(model: BaseModel, **updates) -> BaseModel:
    """Validated copy with the non-None updates applied."""
    values = model.model_dump()
    values.update({k: v for k, v in updates.items() if v is not None})
    return type(model).model_validate(values)


def resolve_config(args) -> RunConfig:
    """Settings defaults, then the config file, then command-line flags."""
    config = load_run_config(args.config) if args.config else RunConfig()
    seed = args.seed
    laplace = _override(
        config.laplace,
        tol=getattr(args, "tol", None),
        max_iters=getattr(args, "max_newton_iters", None),
    )
    opt = _override(
        config.opt,
        restarts=getattr(args, "restarts", None),
        seed=seed,
        jobs=args.jobs,
        laplace=laplace.model_dump(),
    )
    return RunConfig(
        laplace=laplace,
        opt=opt,
        mcmc=_override(config.mcmc, seed=seed, n_samples=getattr(args, "samples", None),
                       burn_in=getattr(args, "burn_in", None)),
        synthesis=_override(
            config.synthesis,
            seed=seed,
            dim=getattr(args, "dim", None),
            n_low=getattr(args, "n_low", None),
            n_high=getattr(args, "n_high_gen", None),
            n_test=getattr(args, "n_test", None),
            noise_level=getattr(args, "noise", None),
            probe_size=getattr(args, "probe_size", None),
            bernoulli_labels=True if getattr(args, "bernoulli", False) else None,
        ),
        protocol=_override(
            config.protocol,
            seed=seed,
            jobs=args.jobs,
            runs=getattr(args, "runs", None),
            n_high=getattr(args, "n_high", None),
            lf_ratio=getattr(args, "lf_ratio", None),
            test_size=getattr(args, "test_size", None),
            standardize=False if getattr(args, "no_standardize", False) else None,
        ),
    )


def _flags(args) -> Dict[str, Any]:
    return {k: v for k, v in vars(args).items() if k != "handler"}


def _info(args, config: RunConfig) -> Dict[str, Any]:
    return provenance(args.command, _flags(args), config.opt.seed)


def _ok(message: str) -> None:
    print(f"[OK] {message}")


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def cmd_generate(args, config: RunConfig) -> int:
    generated = generate_synthetic(config.synthesis)
    out = Path(args.out)
    info = provenance(args.command, _flags(args), config.synthesis.seed)
    save_dataset(generated.dataset, out, info)
    test_path = Path(args.test_out) if args.test_out else _sidecar(out, ".test.csv")
    test = generated.test
    save_dataset(FidelityDataset(np.empty((0, test.dim)), [], test.X, test.y), test_path, info)
    truth_path = Path(args.truth_out) if args.truth_out else _sidecar(out, ".truth.json")
    save_ground_truth(generated.truth, truth_path, info)
    _ok(f"dataset {out} ({generated.dataset.n_l} low, {generated.dataset.n_h} high)")
    _ok(f"test set {test_path} ({test.n} points)")
    _ok(f"ground truth {truth_path} (rho={generated.truth.rho:.6g}, "
        f"disagreement={generated.truth.disagreement:.4f})")
    return 0


def cmd_train(args, config: RunConfig) -> int:
    data = load_dataset(args.data)
    info = _info(args, config)
    if args.single_fidelity:
        sf_data = SfDataset(data.X_H, data.y_H) if data.n_h else SfDataset(data.X_L, data.y_L)
        model = sf_optimize(sf_data, config.opt)
        fitted = model.inner
        restarts = []
    else:
        result = search(data, config.opt)
        model = fitted = result.model
        restarts = result.restarts
    save_model(model, args.out, info)

    hyper = fitted.hyper
    report = {
        "log_marginal": fitted.log_marginal,
        "rho": hyper.rho,
        "s_l": hyper.theta_l.s,
        "sigma_l": hyper.theta_l.sigma,
        "s_d": hyper.theta_d.s,
        "sigma_d": hyper.theta_d.sigma,
        "newton_iters": fitted.newton_iters,
    }
    if args.report:
        columns = ["restart", "status", "initial_L", "final_L", "steps", "grad_norm"]
        rows = [
            {"restart": r.index, "status": r.status, "initial_L": r.initial_L,
             "final_L": r.final_L, "steps": r.steps, "grad_norm": r.grad_norm}
            for r in restarts
        ]
        write_table(args.report, columns, rows, {**info, "result": report})
    _ok(f"model written to {args.out}")
    _ok("L={log_marginal:.10g} rho={rho:.6g} theta_l=({s_l:.6g}, {sigma_l:.6g}) "
        "theta_d=({s_d:.6g}, {sigma_d:.6g}) newton_iters={newton_iters}".format(**report))
    return 0


def cmd_predict(args, config: RunConfig) -> int:
    model = load_model(args.model)
    fitted = model.inner if isinstance(model, SfModel) else model
    data = load_dataset(args.data)
    X = data.X_all
    scores = predict(fitted, X)
    labels = np.concatenate([data.y_L, data.y_H])
    rows = [
        {"point_id": i, "latent_mean": s.latent_mean, "probability": s.probability, "label": s.label}
        for i, s in enumerate(scores)
    ]
    count = write_table(args.out, ["point_id", "latent_mean", "probability", "label"], rows, _info(args, config))
    _ok(f"{count} predictions written to {args.out}")
    if np.unique(labels).size == 2:
        _ok(f"ROC AUC against file labels: {roc_auc([s.latent_mean for s in scores], labels):.4f}")
    return 0


def _synthetic_pools(config: RunConfig, count: int) -> List[BenchmarkDataset]:
    spec = config.synthesis
    datasets = []
    for i in range(count):
        generated = generate_synthetic(_override(spec, seed=spec.seed + i))
        datasets.append(BenchmarkDataset(f"synthetic-{i}", generated.pool, spec.noise_level))
    return datasets


def _file_pools(paths, flip_noise: float, seed: int) -> List[BenchmarkDataset]:
    return [
        BenchmarkDataset(Path(path).stem, pool_from_dataset(load_dataset(path), flip_noise, seed), flip_noise)
        for path in paths
    ]


def _score_files(pairs) -> Dict[str, str]:
    files = {}
    for pair in pairs or []:
        name, sep, path = pair.partition("=")
        if not sep or not name or not path:
            raise InputError(f"--score-file expects NAME=PATH, got {pair!r}")
        files[name] = path
    return files


def cmd_evaluate(args, config: RunConfig) -> int:
    if args.data:
        datasets = _file_pools(args.data, args.flip_noise, config.protocol.seed)
    else:
        datasets = _synthetic_pools(config, args.synthetic)
    report = run_benchmark(datasets, args.methods, config.protocol, config.opt, _score_files(args.score_file))

    info = _info(args, config)
    columns = list(RUN_COLUMNS) + (["wall_time"] if args.timings else [])
    write_table(args.out, columns, [r.model_dump() for r in report.records], info)
    if report.failures:
        failure_path = _sidecar(Path(args.out), ".failures.csv")
        write_table(failure_path, ["dataset_id", "method", "seed", "message"],
                    [vars(f) for f in report.failures], info)
        print(f"[WARNING] {len(report.failures)} method runs failed, see {failure_path}")
    if args.profile_out and report.records:
        profiles = auc_profile(report.records, PROFILE_THRESHOLDS)
        rows = [
            {"threshold": float(t), **{m: float(curve[i]) for m, curve in profiles.items()}}
            for i, t in enumerate(PROFILE_THRESHOLDS)
        ]
        write_table(args.profile_out, ["threshold"] + list(profiles), rows, info)
    for (dataset_id, method), value in mean_auc(report.records).items():
        print(f"  {dataset_id:<24} {method:<10} mean ROC AUC {value:.4f}")
    _ok(f"{len(report.records)} run records written to {args.out}")
    return 0


def cmd_budget(args, config: RunConfig) -> int:
    seed = config.protocol.seed
    if args.data:
        data = load_dataset(args.data)

        def source(noise):
            return pool_from_dataset(data, noise, seed)
    else:
        spec = config.synthesis

        def source(noise):
            return generate_synthetic(_override(spec, noise_level=noise)).pool

    cells = budget_sweep(
        source,
        hf_shares=args.hf_shares,
        lf_cost_fractions=args.lf_costs,
        noise_levels=args.noise_levels,
        runs=config.protocol.runs,
        seed=seed,
        budget=args.budget,
        opt=config.opt,
        test_size=config.protocol.test_size,
        standardize=config.protocol.standardize,
        max_resample=config.protocol.max_resample,
    )
    columns = ["noise_level", "lf_cost_fraction", "hf_share", "method", "n_low", "n_high",
               "runs", "mean_auc", "std_error", "note"]
    count = write_table(args.out, columns, [vars(c) for c in cells], _info(args, config))
    skipped = sum(1 for c in cells if c.mean_auc is None)
    if skipped:
        print(f"[WARNING] {skipped} cells had no successful runs")
    _ok(f"{count} budget cells written to {args.out}")
    return 0


def _parse_grid(axis: str, values: List[str]):
    try:
        if axis == "rho":
            return [float(v) for v in values]
        grid = []
        for v in values:
            s, sigma = v.split(":")
            grid.append((float(s), float(sigma)))
        return grid
    except ValueError:
        raise InputError(f"bad grid for axis {axis}: use numbers for rho and S:SIGMA pairs for kernels") from None


def cmd_sensitivity(args, config: RunConfig) -> int:
    model = load_model(args.model)
    fitted = model.inner if isinstance(model, SfModel) else model
    data = load_dataset(args.validation)
    validation = SfDataset(data.X_H, data.y_H) if data.n_h else SfDataset(data.X_L, data.y_L)
    points = sensitivity_grid(fitted, validation, args.axis, _parse_grid(args.axis, args.grid))
    rows = [
        {"axis": p.axis, "value": ":".join(format(v, settings.float_format) for v in p.value),
         "roc_auc": p.roc_auc, "tuned": p.tuned, "note": p.note}
        for p in points
    ]
    count = write_table(args.out, ["axis", "value", "roc_auc", "tuned", "note"], rows, _info(args, config))
    _ok(f"{count} grid points written to {args.out}")
    return 0


def _gradcheck_instance(config: RunConfig) -> FidelityDataset:
    spec = _override(config.synthesis, dim=2, n_low=20, n_high=10, n_test=1, probe_size=1024, noise_level=0.1)
    return generate_synthetic(spec).dataset


def cmd_gradcheck(args, config: RunConfig) -> int:
    data = load_dataset(args.data) if args.data else _gradcheck_instance(config)
    laplace = _override(config.laplace, tol=min(config.laplace.tol, 1e-10), require_both_classes=False)
    hyper = Hyperparams.from_vector([args.rho, args.s_l, np.log(args.sigma_l), args.s_d, np.log(args.sigma_d)])
    model = fit_mode(data, hyper, laplace)
    analytic = grad_hyper(model).as_vector(hyper)

    def evidence(vector):
        return fit_mode(data, Hyperparams.from_vector(vector), laplace).log_marginal

    numeric = finite_diff_gradient(evidence, hyper.to_vector(), step=args.step)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), args.floor)
    errors = np.abs(analytic - numeric) / scale
    rows = [
        {"coordinate": name, "analytic": a, "numeric": n, "rel_error": e}
        for name, a, n, e in zip(Hyperparams.VECTOR_NAMES, analytic, numeric, errors)
    ]
    info = _info(args, config)
    if args.out:
        write_table(args.out, ["coordinate", "analytic", "numeric", "rel_error"], rows, info)
    for row in rows:
        print(f"  {row['coordinate']:<12} analytic {row['analytic']: .8e} numeric {row['numeric']: .8e} "
              f"rel.err {row['rel_error']:.2e}")
    worst = float(errors.max())
    logger.info("log marginal at check point: %.12g", log_marginal(model))
    if worst > args.threshold:
        print(f"[ERROR] FAIL: max rel. err {worst:.2e} exceeds {args.threshold:.1e}")
        return 1
    _ok(f"PASS: max rel. err {worst:.2e}")
    return 0


def cmd_mcmc_check(args, config: RunConfig) -> int:
    if args.data:
        data = load_dataset(args.data)
        test_data = load_dataset(args.test)
        test = SfDataset(test_data.X_all, np.concatenate([test_data.y_L, test_data.y_H]))
    else:
        generated = generate_synthetic(config.synthesis)
        data, test = generated.dataset, generated.test

    model: FittedModel = search(data, config.opt).model
    laplace_scores = np.array([s.latent_mean for s in predict(model, test.X)])
    laplace_prob = np.array([s.probability for s in predict(model, test.X)])
    result = mcmc_posterior_predict(data, model.hyper, test.X, config.mcmc)

    auc_laplace = roc_auc(laplace_scores, test.y)
    auc_mcmc = roc_auc(result.probability, test.y)
    correlation = float(np.corrcoef(laplace_prob, result.probability)[0, 1])
    info = _info(args, config)
    if args.out:
        rows = [
            {"point_id": i, "laplace_probability": p, "mcmc_probability": q, "label": int(y)}
            for i, (p, q, y) in enumerate(zip(laplace_prob, result.probability, test.y))
        ]
        write_table(args.out, ["point_id", "laplace_probability", "mcmc_probability", "label"], rows,
                    {**info, "auc_laplace": auc_laplace, "auc_mcmc": auc_mcmc, "correlation": correlation})

    print(f"  ROC AUC Laplace {auc_laplace:.4f}  MCMC {auc_mcmc:.4f}  "
          f"probability correlation {correlation:.4f}  ESS {result.ess:.1f}")
    gap = abs(auc_laplace - auc_mcmc)
    if gap > args.max_auc_gap or correlation < args.min_correlation:
        print(f"[ERROR] FAIL: AUC gap {gap:.4f} (max {args.max_auc_gap}), "
              f"correlation {correlation:.4f} (min {args.min_correlation})")
        return 1
    _ok(f"PASS: AUC gap {gap:.4f}, correlation {correlation:.4f}")
    return 0


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfgpc",
        description="Multi-fidelity Gaussian-process classification toolkit",
    )
    parser.add_argument("--version", action="version", version=f"mfgpc {__version__}")
    parser.add_argument("--config", help="JSON config file with laplace/opt/mcmc/synthesis/protocol sections")
    parser.add_argument("--seed", type=int, help="master seed (default from settings or config file)")
    parser.add_argument("--jobs", type=int, help="worker processes for restarts and benchmark cells")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("generate", help="draw a synthetic two-fidelity dataset")
    p.add_argument("--dim", type=int)
    p.add_argument("--n-low", type=int)
    p.add_argument("--n-high", type=int, dest="n_high_gen")
    p.add_argument("--n-test", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--probe-size", type=int)
    p.add_argument("--bernoulli", action="store_true", help="draw labels from Bernoulli(sigmoid(f))")
    p.add_argument("--out", required=True)
    p.add_argument("--test-out")
    p.add_argument("--truth-out")
    p.set_defaults(handler=cmd_generate)

    p = commands.add_parser("train", help="tune hyperparameters and write a model file")
    p.add_argument("--data", required=True)
    p.add_argument("--restarts", type=int)
    p.add_argument("--max-newton-iters", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--single-fidelity", action="store_true", help="fit the single-fidelity baseline")
    p.add_argument("--report", help="per-restart report table (status, initial/final L, steps, grad norm); "
                                    "no report is written without this flag")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    p = commands.add_parser("predict", help="score points with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_predict)

    p = commands.add_parser("evaluate", help="run the benchmark protocol")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--data", nargs="+", help="dataset files used as label pools")
    source.add_argument("--synthetic", type=int, help="number of generated datasets")
    p.add_argument("--flip-noise", type=float, default=0.0, help="low-fidelity flip probability for file pools")
    p.add_argument("--methods", nargs="+", default=["mf-gpc", "gpc", "c-gpc"],
                   help=f"built-in: {', '.join(METHODS)}; or names given with --score-file")
    p.add_argument("--score-file", action="append", metavar="NAME=PATH")
    p.add_argument("--runs", type=int)
    p.add_argument("--n-high", type=int)
    p.add_argument("--lf-ratio", type=float)
    p.add_argument("--test-size", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--timings", action="store_true", help="include wall_time (breaks byte reproducibility)")
    p.add_argument("--profile-out")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_evaluate)

    p = commands.add_parser("budget", help="sweep the high-/low-fidelity budget split")
    p.add_argument("--data", help="dataset file used as the label pool (default: generated data)")
    p.add_argument("--hf-shares", type=_float_list, default=[0.0, 0.25, 0.5, 0.75, 1.0])
    p.add_argument("--lf-costs", type=_float_list, default=[0.125, 0.25, 0.5])
    p.add_argument("--noise-levels", type=_float_list, default=[0.0, 0.2, 0.3, 0.4])
    p.add_argument("--budget", type=float, default=100.0, help="budget in high-fidelity entries")
    p.add_argument("--runs", type=int)
    p.add_argument("--test-size", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_budget)

    p = commands.add_parser("sensitivity", help="validation ROC AUC along one hyperparameter axis")
    p.add_argument("--model", required=True)
    p.add_argument("--validation", required=True)
    p.add_argument("--axis", required=True, choices=["rho", "theta_l", "theta_d"])
    p.add_argument("--grid", nargs="+", required=True, help="rho values, or S:SIGMA pairs for kernel axes")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_sensitivity)

    p = commands.add_parser("gradcheck", help="analytic vs finite-difference marginal-likelihood gradients")
    p.add_argument("--data", help="dataset file (default: seeded 2D instance)")
    p.add_argument("--rho", type=float, default=0.8)
    p.add_argument("--s-l", type=float, default=0.5)
    p.add_argument("--sigma-l", type=float, default=0.4)
    p.add_argument("--s-d", type=float, default=-0.5)
    p.add_argument("--sigma-d", type=float, default=0.3)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--floor", type=float, default=1e-2, help="smallest gradient scale in the relative error")
    p.add_argument("--threshold", type=float, default=1e-3)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_gradcheck)

    p = commands.add_parser("mcmc-check", help="Laplace vs MCMC predictive agreement")
    p.add_argument("--data", help="training dataset file (default: generated data)")
    p.add_argument("--test", help="test dataset file, required with --data")
    p.add_argument("--samples", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--max-auc-gap", type=float, default=0.03)
    p.add_argument("--min-correlation", type=float, default=0.95)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_mcmc_check)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="[%(levelname)s] %(name)s: %(message)s")

    if args.command == "mcmc-check" and args.data and not args.test:
        parser.error("mcmc-check --data needs --test")

    try:
        config = resolve_config(args)
        return args.handler(args, config)
    except ValidationError as exc:
        print(f"[ERROR] invalid configuration: {exc}")
        return 2
    except InputError as exc:
        print(f"[ERROR] {exc}")
        return 2
    except MfgpcError as exc:
        print(f"[ERROR] {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
