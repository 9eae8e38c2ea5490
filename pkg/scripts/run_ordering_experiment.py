#!/usr/bin/env python3
"""Compare Monte Carlo MSE of three designs on the paired-pool instance.

Optimizes the clustering at phi = 1 and at phi = 1/(n-1), adds the
unit-level Bernoulli baseline, and simulates all three on the same
PositiveTE outcome model. Prints one table row per design.
"""

import argparse
import sys

from bipx.cluster_opt import LocalSearchConfig, local_search
from bipx.design import DesignSpec
from bipx.simulate import ScenarioSpec, generate_outcome_model, run_simulation
from bipx.synth import paired_pool_instance


def parse_args(argv):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pairs", type=int, default=100,
                    help="number of outcome pairs (n = 2*pairs)")
    ap.add_argument("--replicates", type=int, default=5000)
    ap.add_argument("--model-seed", type=int, default=11)
    ap.add_argument("--base-seed", type=int, default=100)
    ap.add_argument("--search-seed", type=int, default=3)
    ap.add_argument("--k-max", type=int, default=5)
    ap.add_argument("--max-passes", type=int, default=20)
    return ap.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    g, _ = paired_pool_instance(n_pairs=args.pairs)
    n = g.n_outcome
    print(f"instance: {n} outcome x {g.n_diversion} diversion units, "
          f"{g.nnz} edges")

    scenario = ScenarioSpec.positive_te(model_seed=args.model_seed)
    model = generate_outcome_model(g, scenario)

    designs = {}
    for label, phi in (("exposure-design phi=1", 1.0),
                       (f"exposure-design phi=1/{n - 1}", 1.0 / (n - 1))):
        cfg = LocalSearchConfig(phi=phi, k_max=args.k_max,
                                convergence=False,
                                max_passes=args.max_passes,
                                seed=args.search_seed)
        result = local_search(g, cfg)
        print(f"{label}: {result.clustering.k} clusters, "
              f"objective {result.objective.total:.6f}")
        designs[label] = DesignSpec.independent_cluster(result.clustering, 0.5)
    designs["bernoulli"] = DesignSpec.bernoulli(0.5)

    print(f"\n{'design':<30} {'mse':>12} {'ratio':>8} {'bias':>10} "
          f"{'3*se':>10}")
    baseline = None
    for label, d in designs.items():
        report = run_simulation(g, d, model, args.replicates, args.base_seed,
                                design_name=label,
                                scenario_name=scenario.kind)
        if baseline is None:
            baseline = report.mse
        print(f"{label:<30} {report.mse:>12.6e} "
              f"{report.mse / baseline:>7.2f}x {report.bias:>+10.5f} "
              f"{3 * report.standard_error():>10.5f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
