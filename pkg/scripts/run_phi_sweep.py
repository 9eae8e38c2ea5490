#!/usr/bin/env python3
"""Sweep the trade-off parameter phi and tabulate Monte Carlo MSE.

Works on a graph snapshot (see `bipx ingest`) or, with no --graph, on
the built-in paired-pool instance. One outcome model is shared across
the whole sweep so rows differ only through the optimized designs.
"""

import argparse
import sys

from bipx.cluster_opt import LocalSearchConfig
from bipx.graph_core import load_snapshot
from bipx.simulate import ScenarioSpec, phi_sweep, read_scenario_file
from bipx.synth import paired_pool_instance


def parse_args(argv):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--graph", default=None,
                    help="graph snapshot path (default: built-in instance)")
    ap.add_argument("--scenario", default=None,
                    help="scenario file (default: PositiveTE preset)")
    ap.add_argument("--phis", default="0.005,0.05,0.2,0.5,1.0,2.0",
                    help="comma-separated phi values")
    ap.add_argument("--k-max", type=int, default=5)
    ap.add_argument("--max-passes", type=int, default=20)
    ap.add_argument("--replicates", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="optional CSV path")
    return ap.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    if args.graph is not None:
        g = load_snapshot(args.graph)
    else:
        g, _ = paired_pool_instance()
    if args.scenario is not None:
        scenario = read_scenario_file(args.scenario)
    else:
        scenario = ScenarioSpec.positive_te(model_seed=11)
    phis = [float(tok) for tok in args.phis.split(",") if tok.strip()]
    cfg = LocalSearchConfig(phi=1.0, k_max=args.k_max, convergence=False,
                            max_passes=args.max_passes, seed=args.seed)
    rows = phi_sweep(g, scenario, phis, cfg, args.replicates,
                     base_seed=args.seed, path=args.out)
    print(f"{'phi':>10} {'clusters':>9} {'objective':>14} {'mse':>12} "
          f"{'bias':>10}")
    for row in rows:
        print(f"{row.phi:>10.4g} {row.n_clusters:>9} "
              f"{row.objective_total:>14.6f} {row.mse:>12.6e} "
              f"{row.bias:>+10.5f}")
    if args.out:
        print(f"wrote {len(rows)} rows -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
