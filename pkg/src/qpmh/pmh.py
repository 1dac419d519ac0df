"""Particle Metropolis-Hastings with random-walk, gradient, Newton and
quasi-Newton proposals.

The sampler only sees a *target*: a callable ``target(theta, rng, need_grad)``
returning a :class:`~qpmh.smc.PosteriorEstimate`.  :class:`ParticleTarget`
wraps a particle filter; :class:`GaussianTarget` is an exact analytic target
used for validation.

The quasi-Newton kind (``qpmh2``) treats the chain as order ``M``: the
proposal is centred on the state ``M`` iterations back, its covariance is an
inverse-Hessian estimate built from the ``M - 1`` states in between, and a
rejection copies the lag-``M`` state forward.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from . import _kernels
from .diagnostics import trace_mean
from .smc import PosteriorEstimate, SmcConfig, run_smc, run_smc_abc
from .models import PerturbedDataset

KINDS = ("pmh0", "pmh1", "pmh2", "qpmh2")
CURVATURE_THRESHOLD = 1e-10
DEGENERACY_WINDOW = 500


def default_step(kind: str, p: int) -> float:
    """Rule-of-thumb step sizes for the preconditioned proposals."""
    if kind == "pmh0":
        return 2.562 / np.sqrt(p)
    if kind == "pmh1":
        return 1.125 * p ** (-1.0 / 6.0)
    return 1.0


def _cholesky(mat) -> Optional[np.ndarray]:
    try:
        return linalg.cholesky(mat, lower=True)
    except linalg.LinAlgError:
        return None


@dataclass(frozen=True, eq=False)
class ProposalSpec:
    """Proposal settings.

    ``precond`` is the preconditioning matrix P of the random-walk and
    gradient proposals, whose covariance is ``step**2 * inv(P)``; it should
    approximate the posterior precision.  ``memory``, ``delta`` and ``n_hyb``
    configure the quasi-Newton proposal.
    """

    kind: str
    precond: Optional[np.ndarray] = None
    step: Optional[float] = None
    memory: int = 100
    delta: float = 1000.0
    n_hyb: int = 2500

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"proposal kind must be one of {KINDS}")
        if self.kind in ("pmh0", "pmh1"):
            if self.precond is None:
                raise ValueError(f"{self.kind} needs a preconditioning matrix")
            P = np.atleast_2d(np.asarray(self.precond, dtype=float))
            if not np.allclose(P, P.T) or _cholesky(P) is None:
                raise ValueError("preconditioning matrix must be symmetric positive definite")
            object.__setattr__(self, "precond", P)
        if self.memory < 2:
            raise ValueError("memory length must be at least 2")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")

    def step_size(self, p: int) -> float:
        return self.step if self.step is not None else default_step(self.kind, p)


@dataclass(frozen=True)
class ChainState:
    theta: np.ndarray
    estimate: PosteriorEstimate
    accepted: bool
    iteration: int

    @property
    def logpost(self) -> float:
        return self.estimate.logpost


@dataclass(frozen=True, eq=False)
class GaussianProposal:
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, mean, cov):
        cov = 0.5 * (cov + cov.T)
        chol = _cholesky(cov)
        if chol is None:
            raise np.linalg.LinAlgError("proposal covariance is not positive definite")
        return cls(np.asarray(mean, dtype=float), cov, chol)

    def sample(self, rng) -> np.ndarray:
        return self.mean + self.chol @ rng.standard_normal(self.mean.size)

    def logpdf(self, x) -> float:
        z = linalg.solve_triangular(self.chol, np.asarray(x) - self.mean, lower=True)
        return float(-0.5 * z @ z - np.sum(np.log(np.diag(self.chol))) - 0.5 * z.size * np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------


class GaussianTarget:
    """Exact Gaussian log-target (flat prior) with analytic score and Hessian."""

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.precision = np.linalg.inv(self.cov)
        self._dist = GaussianProposal.build(self.mean, self.cov)
        self.p = self.mean.size

    def __call__(self, theta, rng=None, need_grad=True) -> PosteriorEstimate:
        theta = np.asarray(theta, dtype=float)
        return PosteriorEstimate(
            loglik=self._dist.logpdf(theta),
            logprior=0.0,
            grad=-self.precision @ (theta - self.mean),
            neg_hessian=self.precision,
        )


class ParticleTarget:
    """Posterior of an SSM with the likelihood estimated by a particle filter.

    ``data`` is a raw observation vector for the tractable schemes or a
    :class:`PerturbedDataset` for ABC.
    """

    def __init__(self, model, data, cfg: SmcConfig):
        self.model = model
        self.data = data
        self.cfg = cfg
        self.p = model.p
        if isinstance(data, PerturbedDataset) != (cfg.scheme == "abc"):
            raise ValueError("abc scheme requires a PerturbedDataset and vice versa")

    def __call__(self, theta, rng, need_grad=True) -> PosteriorEstimate:
        theta = np.asarray(theta, dtype=float)
        logprior = self.model.log_prior(theta)
        if not np.isfinite(logprior) or not self.model.is_valid(theta):
            return PosteriorEstimate(-np.inf, logprior, np.full(self.p, np.nan))
        if self.cfg.scheme == "abc":
            _, est = run_smc_abc(rng, self.model, self.data, theta, self.cfg, gradient=need_grad)
        else:
            _, est = run_smc(rng, self.model, self.data, theta, self.cfg, gradient=need_grad)
        return est


# ---------------------------------------------------------------------------
# proposal machinery
# ---------------------------------------------------------------------------


def acceptance_probability(cand: ChainState, ref: ChainState, log_q_fwd: float, log_q_rev: float) -> float:
    """``min(1, pi(cand) q(ref | cand) / (pi(ref) q(cand | ref)))``."""
    if not np.isfinite(cand.estimate.loglik) or not np.isfinite(cand.logpost):
        return 0.0
    log_ratio = cand.logpost - ref.logpost + log_q_rev - log_q_fwd
    if np.isnan(log_ratio):
        return 0.0
    return float(np.exp(min(0.0, log_ratio)))


def hybrid_psd_fallback(H, trace, n_hyb: int = 2500) -> np.ndarray:
    """Return ``H`` if positive definite, otherwise a usable substitute.

    With enough post-burn-in samples the substitute is their recent empirical
    covariance; otherwise the eigenvalues of ``H`` are mirrored to their
    absolute values (floored at 1e-8).
    """
    H = 0.5 * (np.atleast_2d(H) + np.atleast_2d(H).T)
    if _cholesky(H) is not None:
        return H
    p = H.shape[0]
    trace = np.asarray(trace, dtype=float).reshape(-1, p)
    if trace.shape[0] >= max(p + 1, 50):
        recent = trace[-min(n_hyb, trace.shape[0]) :]
        return np.atleast_2d(np.cov(recent, rowvar=False)) + 1e-8 * np.eye(p)
    vals, vecs = np.linalg.eigh(H)
    vals = np.maximum(np.abs(vals), 1e-8)
    return (vecs * vals) @ vecs.T


def pmh_proposal(state: ChainState, spec: ProposalSpec, trace=()) -> GaussianProposal:
    """The PMH0/PMH1/PMH2 Gaussian proposal ``q(. | state)``."""
    theta = state.theta
    p = theta.size
    eps = spec.step_size(p)
    if spec.kind in ("pmh0", "pmh1"):
        cov = eps**2 * np.linalg.inv(spec.precond)
        mean = theta
        if spec.kind == "pmh1":
            mean = theta + 0.5 * cov @ state.estimate.grad
        return GaussianProposal.build(mean, cov)
    if spec.kind == "pmh2":
        H = state.estimate.neg_hessian
        if H is None:
            raise ValueError("pmh2 needs a negative-Hessian estimate from the target")
        Hinv = hybrid_psd_fallback(np.linalg.inv(H), trace, spec.n_hyb)
        cov = eps**2 * Hinv
        return GaussianProposal.build(theta + 0.5 * cov @ state.estimate.grad, cov)
    raise ValueError("use the quasi-Newton path for qpmh2")


def bfgs_inverse_hessian(window, delta: float):
    """Inverse negative-Hessian estimate from a window of chain states.

    ``window`` holds :class:`ChainState` objects (oldest first).  Unique
    parameter vectors are sorted by ascending log-likelihood (ties: older
    first) and consecutive pairs feed the limited-memory BFGS recursion with
    ``s = theta_l - theta_{l-1}`` and ``g`` the matching difference of
    negative log-posterior gradients, so curvature pairs satisfy ``g's > 0``
    for concave targets.  Returns ``(matrix, used_fallback)``; the fallback
    ``I / delta`` is used when fewer than two unique states (or no usable
    pair) are available.
    """
    seen = set()
    uniq = []
    for st in window:
        key = st.theta.tobytes()
        if key not in seen:
            seen.add(key)
            uniq.append(st)
    p = window[0].theta.size if window else 1
    if len(uniq) < 2:
        return np.eye(p) / delta, True
    order = sorted(range(len(uniq)), key=lambda i: (uniq[i].estimate.loglik, i))
    thetas = np.array([uniq[i].theta for i in order])
    grads = np.array([uniq[i].estimate.grad for i in order])
    S = np.diff(thetas, axis=0)
    G = -np.diff(grads, axis=0)
    B, used = _kernels.bfgs_recursion(S, G, CURVATURE_THRESHOLD)
    if used == 0:
        return np.eye(p) / delta, True
    return 0.5 * (B + B.T), False


# ---------------------------------------------------------------------------
# chain
# ---------------------------------------------------------------------------


@dataclass
class ChainHistory:
    """Full trace of a chain plus the ring buffer of its last ``M`` states.

    ``thetas[k - 1]`` holds the state after iteration ``k = 1..K``; the
    initial point is kept in ``theta0``.
    """

    theta0: np.ndarray
    thetas: np.ndarray
    loglik: np.ndarray
    logprior: np.ndarray
    accepted: np.ndarray
    buffer: deque
    fallbacks: int = 0
    degenerate_warnings: int = 0

    @property
    def K(self) -> int:
        return self.thetas.shape[0]

    def acceptance_rate(self, burnin: int = 0) -> float:
        acc = self.accepted[burnin:]
        return float(np.mean(acc)) if acc.size else float("nan")

    def posterior_mean(self, burnin: int) -> np.ndarray:
        """Ergodic average over the ``K - K_b`` post-burn-in states."""
        return trace_mean(self.thetas, burnin)


def run_pmh(rng, target, proposal: ProposalSpec, n_iter: int, theta0, burnin: int = 0) -> ChainHistory:
    """Run ``n_iter`` iterations of particle Metropolis-Hastings.

    ``burnin`` only matters for the hybrid covariance fallback, which draws
    on post-burn-in samples.
    """
    theta0 = np.asarray(theta0, dtype=float)
    p = theta0.size
    kind = proposal.kind
    need_grad = kind != "pmh0"
    M = proposal.memory

    est0 = target(theta0, rng, need_grad)
    if not np.isfinite(est0.logpost):
        raise ValueError("initial parameter has zero posterior density (or a degenerate filter)")

    thetas = np.empty((n_iter, p))
    loglik = np.empty(n_iter)
    logprior = np.empty(n_iter)
    accepted = np.zeros(n_iter, dtype=bool)
    buffer: deque = deque([ChainState(theta0, est0, True, 0)], maxlen=M if kind == "qpmh2" else 1)
    hist = ChainHistory(theta0, thetas, loglik, logprior, accepted, buffer)
    warmup_cov = np.eye(p) / proposal.delta
    recent_dead = deque(maxlen=DEGENERACY_WINDOW)

    for k in range(1, n_iter + 1):
        post_burn = thetas[burnin : k - 1]
        if kind == "qpmh2" and k > M:
            ref = buffer[0]
            cov, used_fallback = bfgs_inverse_hessian(list(buffer)[1:], proposal.delta)
            if _cholesky(cov) is None:
                cov = hybrid_psd_fallback(cov, post_burn, proposal.n_hyb)
                used_fallback = True
            hist.fallbacks += int(used_fallback)
            fwd = GaussianProposal.build(ref.theta + 0.5 * cov @ ref.estimate.grad, cov)
        elif kind == "qpmh2":
            ref = buffer[-1]
            fwd = GaussianProposal.build(ref.theta, warmup_cov)
        else:
            ref = buffer[-1]
            fwd = pmh_proposal(ref, proposal, post_burn)

        theta_c = fwd.sample(rng)
        est_c = target(theta_c, rng, need_grad)
        cand = ChainState(theta_c, est_c, True, k)
        # out-of-support proposals are ordinary rejections, not filter failures
        recent_dead.append(bool(np.isfinite(est_c.logprior) and not np.isfinite(est_c.loglik)))

        a_prob = 0.0
        if np.isfinite(est_c.logpost) and (not need_grad or np.all(np.isfinite(est_c.grad))):
            log_q_fwd = fwd.logpdf(theta_c)
            if kind == "qpmh2" and k > M:
                rev = GaussianProposal(theta_c + 0.5 * fwd.cov @ est_c.grad, fwd.cov, fwd.chol)
            elif kind == "qpmh2" or kind == "pmh0":
                rev = GaussianProposal(theta_c, fwd.cov, fwd.chol)
            else:
                rev = pmh_proposal(cand, proposal, post_burn)
            a_prob = acceptance_probability(cand, ref, log_q_fwd, rev.logpdf(ref.theta))

        if rng.random() < a_prob:
            new = cand
        else:
            new = ChainState(ref.theta, ref.estimate, False, k)
        buffer.append(new)
        thetas[k - 1] = new.theta
        loglik[k - 1] = new.estimate.loglik
        logprior[k - 1] = new.estimate.logprior
        accepted[k - 1] = new.accepted

        if len(recent_dead) == DEGENERACY_WINDOW and k % DEGENERACY_WINDOW == 0:
            if np.mean(recent_dead) > 0.99:
                hist.degenerate_warnings += 1
                warnings.warn(
                    f"over 99% of the last {DEGENERACY_WINDOW} proposals hit a degenerate filter (iteration {k})",
                    RuntimeWarning,
                    stacklevel=2,
                )
    return hist
