"""Inefficiency-factor benchmark of PMH0, PMH1 and qPMH2 on synthetic LGSS data.

Usage: python3 scripts/proposal_benchmark.py [--iterations 15000] [--burnin 5000] [--replicates 10]
"""

import argparse

from qpmh.experiments import if_table, make_target, proposal_benchmark, simulate_dataset
from qpmh.models import LGSS, LGSS_TRUTH
from qpmh.smc import SmcConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=15000)
    ap.add_argument("--burnin", type=int, default=5000)
    ap.add_argument("--replicates", type=int, default=10)
    ap.add_argument("--particles", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    model = LGSS()
    _, y = simulate_dataset(model, LGSS_TRUTH, 250, args.seed)
    target = make_target(model, y, SmcConfig(args.particles, 0.0, 12, "fully_adapted"), args.seed)
    runs = proposal_benchmark(target, LGSS_TRUTH, n_iter=args.iterations, burnin=args.burnin,
                              replicates=args.replicates, seed=args.seed, workers=args.workers)
    print(f"{'rule':<9}{'kind':<7}{'acc':>6}{'minIF':>9}{'iqr':>8}{'maxIF':>9}{'iqr':>8}")
    for r in if_table(runs):
        print(f"{r['rule']:<9}{r['kind']:<7}{r['acceptance']:>6.2f}{r['min_if_median']:>9.2f}"
              f"{r['min_if_iqr']:>8.2f}{r['max_if_median']:>9.2f}{r['max_if_iqr']:>8.2f}")


if __name__ == "__main__":
    main()
