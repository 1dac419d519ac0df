"""Experiment drivers: tolerance sweep, proposal benchmark and model fits.

Every driver takes an integer seed and derives one :class:`RngStream` per
replicate, so results are reproducible and replicates are independent.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .diagnostics import epsilon_sweep_report, inefficiency_factor
from .dist import RngStream
from .kalman import kalman_filter_smoother
from .models import LGSS, perturb_dataset
from .pmh import ParticleTarget, ProposalSpec, run_pmh
from .smc import SmcConfig, run_smc, run_smc_abc

SWEEP_EPSILONS = (0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 5.0)
SWEEP_QUANTITIES = ("loglik", "grad_mu", "grad_phi", "grad_sigma_v")

# pilot protocol for the preconditioner of PMH0/PMH1
PILOT_ITERS = 5000
PILOT_BURNIN = 1000
PILOT_STEP_SD = 0.01
PILOT_SHRINK = 0.1


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def simulate_dataset(model, theta, T: int, seed: int):
    rng = RngStream(seed, 0).generator()
    return model.simulate(rng, np.asarray(theta, dtype=float), T)


# ---------------------------------------------------------------------------
# tolerance sweep (LGSS only: the Kalman filter provides the truth)
# ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    errors: dict  # quantity -> {epsilon: replicate errors}
    reference: dict  # quantity -> standard-SMC replicate errors
    rows: list


def epsilon_sweep(
    model: LGSS,
    y,
    theta,
    epsilons=SWEEP_EPSILONS,
    replicates: int = 20,
    seed: int = 0,
    n_abc: int = 2500,
    n_smc: int = 50,
    lag: int = 12,
    workers: int = 1,
) -> SweepResult:
    """Errors of SMC-ABC log-likelihood and gradient estimates versus Kalman.

    Each replicate draws a fresh perturbation of ``y``.  Errors are signed
    differences ``estimate - truth`` (the report takes absolute values).
    """
    theta = np.asarray(theta, dtype=float)
    kf = kalman_filter_smoother(theta, y, model.sigma_e)
    truth = np.concatenate([[kf.loglik], kf.score + model.grad_log_prior(theta)])

    def one(job):
        eps_idx, r = job
        rng = RngStream(seed, r).child(eps_idx + 1).generator()
        if eps_idx < 0:
            cfg = SmcConfig(n_smc, 0.0, lag, "fully_adapted")
            _, est = run_smc(rng, model, y, theta, cfg)
        else:
            eps = epsilons[eps_idx]
            data = perturb_dataset(rng, y, model.psi, eps)
            _, est = run_smc_abc(rng, model, data, theta, SmcConfig(n_abc, eps, lag, "abc"))
        return np.concatenate([[est.loglik], est.grad]) - truth

    jobs = [(e, r) for e in range(-1, len(epsilons)) for r in range(replicates)]
    out = dict(zip(jobs, _map(one, jobs, workers)))
    errors = {q: {} for q in SWEEP_QUANTITIES}
    reference = {}
    for j, q in enumerate(SWEEP_QUANTITIES):
        reference[q] = np.array([out[(-1, r)][j] for r in range(replicates)])
        for e, eps in enumerate(epsilons):
            errors[q][float(eps)] = np.array([out[(e, r)][j] for r in range(replicates)])
    return SweepResult(errors, reference, epsilon_sweep_report(errors, reference))


# ---------------------------------------------------------------------------
# proposal benchmark
# ---------------------------------------------------------------------------


def pilot_preconditioner(rng, target, theta0, n_iter=PILOT_ITERS, burnin=PILOT_BURNIN,
                         step_sd=PILOT_STEP_SD, shrink=PILOT_SHRINK) -> np.ndarray:
    """Preconditioner P from a PMH0 pilot with covariance ``step_sd^2 I``.

    The post-burn-in covariance is shrunk toward its diagonal and inverted.
    """
    p = np.size(theta0)
    spec = ProposalSpec("pmh0", precond=np.eye(p) / step_sd**2, step=1.0)
    hist = run_pmh(rng, target, spec, n_iter, theta0, burnin)
    cov = np.atleast_2d(np.cov(hist.thetas[burnin:], rowvar=False))
    cov = (1.0 - shrink) * cov + shrink * np.diag(np.diag(cov))
    if np.any(np.diag(cov) <= 0):
        raise RuntimeError("pilot run never moved; cannot estimate a preconditioner")
    return np.linalg.inv(cov)


@dataclass
class ChainRun:
    kind: str
    replicate: int
    history: object
    if_adapted: np.ndarray
    if_fixed: np.ndarray
    acceptance: float


def _chain_run(kind, r, hist, burnin):
    w = hist.thetas[burnin:]
    fixed_L = min(1000, w.shape[0] - 2)
    ifa = np.array([inefficiency_factor(w[:, j], "adapted") for j in range(w.shape[1])])
    iff = np.array([inefficiency_factor(w[:, j], fixed_L) for j in range(w.shape[1])])
    return ChainRun(kind, r, hist, ifa, iff, hist.acceptance_rate(burnin))


def proposal_benchmark(
    target,
    theta0,
    kinds=("pmh0", "pmh1", "qpmh2"),
    n_iter: int = 15000,
    burnin: int = 5000,
    replicates: int = 10,
    seed: int = 0,
    memory: int = 100,
    delta: float = 1000.0,
    n_hyb: int = 2500,
    precond=None,
    step=None,
    workers: int = 1,
) -> list:
    """Run every proposal kind ``replicates`` times on the same target.

    PMH0/PMH1 share one pilot-run preconditioner per replicate unless
    ``precond`` is given.
    """
    theta0 = np.asarray(theta0, dtype=float)

    def one(r):
        base = RngStream(seed, r)
        P = precond
        if P is None and any(k in ("pmh0", "pmh1") for k in kinds):
            P = pilot_preconditioner(base.child(0).generator(), target, theta0)
        runs = []
        for i, kind in enumerate(kinds):
            rng = base.child(i + 1).generator()
            spec = ProposalSpec(kind, precond=P if kind in ("pmh0", "pmh1") else None,
                                step=step, memory=memory, delta=delta, n_hyb=n_hyb)
            hist = run_pmh(rng, target, spec, n_iter, theta0, burnin)
            runs.append(_chain_run(kind, r, hist, burnin))
        return runs

    return [run for runs in _map(one, range(replicates), workers) for run in runs]


def if_table(runs) -> list:
    """Table of median/IQR of the min and max IF over parameters, per kind."""
    rows = []
    kinds = list(dict.fromkeys(run.kind for run in runs))
    for rule in ("adapted", "fixed"):
        for kind in kinds:
            sel = [run for run in runs if run.kind == kind]
            vals = [run.if_adapted if rule == "adapted" else run.if_fixed for run in sel]
            mins = np.array([v.min() for v in vals])
            maxs = np.array([v.max() for v in vals])
            iqr = lambda a: float(np.subtract(*np.percentile(a, [75, 25])))  # noqa: E731
            rows.append({
                "rule": rule,
                "kind": kind,
                "acceptance": float(np.median([run.acceptance for run in sel])),
                "min_if_median": float(np.median(mins)),
                "min_if_iqr": iqr(mins),
                "max_if_median": float(np.median(maxs)),
                "max_if_iqr": iqr(maxs),
            })
    return rows


def make_target(model, y, smc: SmcConfig, seed: int = 0):
    """Build the particle target; ABC data are perturbed once, here."""
    if smc.scheme == "abc":
        rng = RngStream(seed, 0).child(999).generator()
        data = perturb_dataset(rng, y, model.psi, smc.epsilon)
        return ParticleTarget(model, data, smc)
    return ParticleTarget(model, np.asarray(y, dtype=float), smc)
