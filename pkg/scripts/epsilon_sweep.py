"""Tolerance sweep on synthetic LGSS data; prints the error table.

Usage: python3 scripts/epsilon_sweep.py [--replicates 20] [--seed 0] [--out sweep.csv]
"""

import argparse

from qpmh.diagnostics import write_sweep_csv
from qpmh.experiments import SWEEP_EPSILONS, epsilon_sweep, simulate_dataset
from qpmh.models import LGSS, LGSS_TRUTH


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--replicates", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--T", type=int, default=250)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="sweep.csv")
    args = ap.parse_args()

    model = LGSS()
    _, y = simulate_dataset(model, LGSS_TRUTH, args.T, args.seed)
    res = epsilon_sweep(model, y, LGSS_TRUTH, SWEEP_EPSILONS, args.replicates, args.seed, workers=args.workers)
    write_sweep_csv(res.rows, args.out)
    print(f"{'quantity':<14}{'epsilon':>9}{'median':>10}{'smc':>10}")
    for r in res.rows:
        print(f"{r.quantity:<14}{r.epsilon:>9g}{r.median:>10.3f}{r.reference:>10.3f}")


if __name__ == "__main__":
    main()
