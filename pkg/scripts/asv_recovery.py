"""Fit the alpha-stable SV model to simulated (or supplied) returns.

Without ``--prices`` the data are simulated at the reference parameter and
the script reports whether each 95% credible interval covers it.

Usage: python3 scripts/asv_recovery.py [--prices prices.csv] [--particles 1000] [--iterations 3000]
"""

import argparse

import numpy as np

from qpmh.cli import read_prices
from qpmh.experiments import pilot_preconditioner
from qpmh.models import ASV_REFERENCE, AlphaSV, log_returns, perturb_dataset
from qpmh.pmh import ParticleTarget, ProposalSpec, run_pmh
from qpmh.smc import SmcConfig

NAMES = ("mu", "phi", "sigma_v", "alpha")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--prices")
    ap.add_argument("--T", type=int, default=150)
    ap.add_argument("--particles", type=int, default=1000)
    ap.add_argument("--epsilon", type=float, default=0.1)
    ap.add_argument("--iterations", type=int, default=3000)
    ap.add_argument("--burnin", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    model = AlphaSV()
    rng = np.random.default_rng(args.seed)
    if args.prices:
        y = log_returns(read_prices(args.prices))
    else:
        _, y = model.simulate(rng, ASV_REFERENCE, args.T)
    data = perturb_dataset(rng, y, model.psi, args.epsilon)
    target = ParticleTarget(model, data, SmcConfig(args.particles, args.epsilon, 12, "abc"))
    P = pilot_preconditioner(rng, target, ASV_REFERENCE, n_iter=1000, burnin=200)
    hist = run_pmh(rng, target, ProposalSpec("pmh0", precond=P), args.iterations, ASV_REFERENCE, args.burnin)

    w = hist.thetas[args.burnin:]
    lo, hi = np.quantile(w, [0.025, 0.975], axis=0)
    print(f"acceptance {hist.acceptance_rate(args.burnin):.2f}")
    for j, name in enumerate(NAMES):
        ref = ASV_REFERENCE[j]
        flag = "" if args.prices else ("  covers" if lo[j] <= ref <= hi[j] else "  misses")
        print(f"{name:<8} mean {w[:, j].mean():7.3f}  95% [{lo[j]:.3f}, {hi[j]:.3f}]  ref {ref:.3f}{flag}")


if __name__ == "__main__":
    main()
