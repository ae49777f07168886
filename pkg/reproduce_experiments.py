#!/usr/bin/env python3
"""
Desk-scale experiment runner
============================
Re-runs the three end-to-end experiments on freshly generated data and
prints one [OK] / [FAIL] line per check.

Usage:
    python reproduce_experiments.py [--only NAME ...] [--seed N] [--datasets N] [--runs N]

Options:
    --only NAME       mcmc, benchmark or budget (default: all three)
    --seed N          master seed (default: 0)
    --datasets N      generated datasets per dimension in the benchmark (default: 10)
    --runs N          runs per dataset / seeds per budget cell (default: 3 / 10)
"""

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

# Add parent directory to path to import the package
sys.path.insert(0, str(Path(__file__).parent))

from mfgpc.datagen import generate_synthetic
from mfgpc.evalharness import BenchmarkDataset, budget_sweep, mean_auc, roc_auc, run_benchmark
from mfgpc.hyperopt import optimize
from mfgpc.laplace import predict
from mfgpc.models import BenchmarkProtocol, McmcConfig, OptConfig, SynthesisSpec
from mfgpc.oracles import mcmc_posterior_predict


def report(ok: bool, message: str) -> bool:
    print(f"{'[OK]  ' if ok else '[FAIL]'} {message}")
    return ok


def laplace_vs_mcmc(seed: int) -> bool:
    print("\nLaplace vs MCMC on a 2D instance (75 HF / 225 LF)")
    generated = generate_synthetic(SynthesisSpec(dim=2, n_low=225, n_high=75, n_test=1000, noise_level=0.2, seed=seed))
    model = optimize(generated.dataset, OptConfig(restarts=3, seed=seed))
    test = generated.test

    laplace = np.array([s.probability for s in predict(model, test.X)])
    mcmc = mcmc_posterior_predict(generated.dataset, model.hyper, test.X, McmcConfig(seed=seed))
    auc_laplace = roc_auc(laplace, test.y)
    auc_mcmc = roc_auc(mcmc.probability, test.y)
    correlation = float(np.corrcoef(laplace, mcmc.probability)[0, 1])

    print(f"  AUC laplace={auc_laplace:.4f} mcmc={auc_mcmc:.4f} ess={mcmc.ess:.0f} shrinks={mcmc.mean_shrinks:.1f}")
    gap_ok = report(abs(auc_laplace - auc_mcmc) <= 0.03, f"AUC gap {abs(auc_laplace - auc_mcmc):.4f} <= 0.03")
    corr_ok = report(correlation >= 0.95, f"probability correlation {correlation:.4f} >= 0.95")
    return gap_ok and corr_ok


def _group_means(dim: int, count: int, runs: int, seed: int):
    datasets = []
    for index in range(count):
        spec = SynthesisSpec(dim=dim, n_low=450, n_high=150, n_test=400, noise_level=0.2, seed=seed + index)
        datasets.append(BenchmarkDataset(f"synthetic-{dim}d-{index}", generate_synthetic(spec).pool, 0.2))
    protocol = BenchmarkProtocol(n_high=75, lf_ratio=3.0, runs=runs, seed=seed)
    result = run_benchmark(datasets, ["mf-gpc", "gpc"], protocol, OptConfig(restarts=3))
    for failure in result.failures:
        print(f"  Warning: {failure.dataset_id} seed {failure.seed} {failure.method}: {failure.message}")

    means = mean_auc(result.records)
    by_method = {}
    for (_, method), value in means.items():
        by_method.setdefault(method, []).append(value)
    return {method: float(np.mean(values)) for method, values in by_method.items()}


def benchmark(seed: int, count: int, runs: int) -> bool:
    print(f"\nBenchmark at noise 0.2 ({count} datasets x {runs} runs, 75 HF / 225 LF)")
    two = _group_means(2, count, runs, seed)
    print(f"  2D mean AUC mf-gpc={two['mf-gpc']:.4f} gpc={two['gpc']:.4f}")
    ok = report(two["mf-gpc"] >= 0.92, "2D mf-gpc mean AUC >= 0.92")
    ok &= report(two["mf-gpc"] >= two["gpc"] - 0.01, "2D mf-gpc mean within 0.01 of gpc or better")

    five = _group_means(5, count, runs, seed)
    print(f"  5D mean AUC mf-gpc={five['mf-gpc']:.4f} gpc={five['gpc']:.4f}")
    ok &= report(five["mf-gpc"] - five["gpc"] >= 0.05, "5D mf-gpc beats gpc by >= 0.05")
    return ok


def budget_direction(seed: int, runs: int) -> bool:
    print(f"\nBudget sweep directionality (budget 100, LF cost 1/8, {runs} seeds)")

    def pool(noise: float):
        spec = SynthesisSpec(dim=2, n_low=800, n_high=100, n_test=500, noise_level=noise, seed=seed)
        return generate_synthetic(spec).pool

    cells = budget_sweep(pool, hf_shares=[0.0, 1.0], lf_cost_fractions=[0.125], noise_levels=[0.0, 0.4],
                         runs=runs, seed=seed, opt=OptConfig(restarts=2), test_size=400)
    table = {(c.noise_level, c.hf_share): c.mean_auc for c in cells if c.method == "mf-gpc"}
    for (noise, share), value in sorted(table.items()):
        print(f"  noise={noise} hf_share={share} mean AUC={value}")
    if any(value is None for value in table.values()):
        return report(False, "every budget cell produced an AUC")

    ok = report(table[(0.0, 0.0)] >= table[(0.0, 1.0)], "noise 0.0: all-LF budget >= all-HF budget")
    ok &= report(table[(0.4, 0.0)] < table[(0.4, 1.0)], "noise 0.4: all-HF budget beats all-LF budget")
    return ok


def main():
    parser = argparse.ArgumentParser(description="Re-run the desk-scale experiments")
    parser.add_argument("--only", nargs="+", choices=["mcmc", "benchmark", "budget"],
                        default=["mcmc", "benchmark", "budget"])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--datasets", type=int, default=10)
    parser.add_argument("--runs", type=int, default=None)
    args = parser.parse_args()

    logging.basicConfig(level=logging.WARNING, format="[%(levelname)s] %(name)s: %(message)s")
    start_time = time.perf_counter()
    results = []

    if "mcmc" in args.only:
        results.append(laplace_vs_mcmc(args.seed))
    if "benchmark" in args.only:
        results.append(benchmark(args.seed, args.datasets, args.runs or 3))
    if "budget" in args.only:
        results.append(budget_direction(args.seed, args.runs or 10))

    elapsed = time.perf_counter() - start_time
    print("\n" + "=" * 60)
    print(f"{sum(results)}/{len(results)} experiments passed in {elapsed:.0f}s")
    print("=" * 60)
    sys.exit(0 if all(results) else 1)


if __name__ == "__main__":
    main()
