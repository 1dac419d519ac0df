"""Particle filters, the likelihood estimator and the fixed-lag score estimator.

Three schemes are available:

* ``bootstrap`` -- propagate through the transition, weight by the
  observation density (tractable models only).
* ``fully_adapted`` -- exact one-step conditional proposal (LGSS only).
* ``abc`` -- bootstrap filter on the perturbed model, where each particle
  carries the auxiliary draws ``v`` and is weighted by the Gaussian kernel
  ``rho_eps(y_check_t - psi(tau(x_t, v_t)))``.

Resampling is multinomial at every step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .models import LGSS, PerturbedDataset

SCHEMES = ("bootstrap", "fully_adapted", "abc")


@dataclass(frozen=True)
class SmcConfig:
    n_particles: int = 50
    epsilon: float = 0.0
    lag: int = 12
    scheme: str = "fully_adapted"

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("need at least one particle")
        if self.lag < 0:
            raise ValueError("lag must be non-negative")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.scheme == "abc" and not self.epsilon > 0:
            raise ValueError("the abc scheme needs epsilon > 0")


@dataclass
class ParticleSystem:
    """Full output of one filter run.

    Row ``t`` of every array refers to time ``t = 0..T``.  ``ancestors[t, i]``
    indexes the time ``t-1`` parent of particle ``i`` (row 0 is the
    identity).  ``log_weights[t]`` are the unnormalised log weights whose
    averages give the likelihood factors; ``weights[t]`` are the normalised
    weights of ``particles[t]`` as a filtering approximation.  For the fully
    adapted scheme the two differ: the likelihood weights belong to the time
    ``t-1`` particles and the propagated particles are equally weighted.
    """

    particles: np.ndarray
    ancestors: np.ndarray
    log_weights: np.ndarray
    weights: np.ndarray
    scheme: str
    aux: Optional[np.ndarray] = None
    degenerate_at: Optional[int] = None

    @property
    def T(self) -> int:
        return self.particles.shape[0] - 1

    @property
    def N(self) -> int:
        return self.particles.shape[1]

    @property
    def weights_unnorm(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def ess(self) -> np.ndarray:
        return 1.0 / np.sum(self.weights**2, axis=1)

    def trace_lineage(self, t_from: int, t_to: int) -> np.ndarray:
        """Indices at time ``t_to`` of the ancestors of the particles at ``t_from``."""
        if not 0 <= t_to <= t_from <= self.T:
            raise ValueError("need 0 <= t_to <= t_from <= T")
        idx = np.arange(self.N)
        for s in range(t_from, t_to, -1):
            idx = self.ancestors[s, idx]
        return idx


@dataclass
class PosteriorEstimate:
    loglik: float
    logprior: float
    grad: Optional[np.ndarray] = None
    neg_hessian: Optional[np.ndarray] = None

    @property
    def logpost(self) -> float:
        return self.loglik + self.logprior


# ---------------------------------------------------------------------------
# filters
# ---------------------------------------------------------------------------


def _resample(rng, weights):
    cdf = np.cumsum(weights)
    idx = np.searchsorted(cdf, rng.random(weights.size) * cdf[-1], side="right")
    return np.minimum(idx, weights.size - 1)


def _generic_filter(rng, model, theta, n, T, log_weight, with_aux, scheme):
    X = np.empty((T + 1, n))
    A = np.empty((T + 1, n), dtype=np.int64)
    LW = np.zeros((T + 1, n))
    W = np.empty((T + 1, n))
    V = np.empty((T + 1, n, model.aux_dim)) if with_aux else None
    X[0] = model.sample_initial(rng, theta, n)
    A[0] = np.arange(n)
    W[0] = 1.0 / n
    if with_aux:
        V[0] = model.sample_aux(rng, theta, n)
    for t in range(1, T + 1):
        a = _resample(rng, W[t - 1])
        A[t] = a
        X[t] = model.sample_transition(rng, theta, X[t - 1, a])
        if with_aux:
            V[t] = model.sample_aux(rng, theta, n)
        lw = log_weight(t, X[t], V[t] if with_aux else None)
        lw = np.where(np.isnan(lw), -np.inf, lw)
        LW[t] = lw
        mx = lw.max()
        if not np.isfinite(mx):
            ps = ParticleSystem(X[: t + 1], A[: t + 1], LW[: t + 1], W[: t + 1], scheme,
                                None if V is None else V[: t + 1], degenerate_at=t)
            ps.weights[t] = np.nan
            return ps
        w = np.exp(lw - mx)
        W[t] = w / w.sum()
    return ParticleSystem(X, A, LW, W, scheme, V)


def _filter(rng, model, y, theta, cfg: SmcConfig) -> ParticleSystem:
    theta = model.check_theta(theta)
    if not model.is_valid(theta):
        raise ValueError(f"parameter {theta} outside the model's valid region")
    n = cfg.n_particles
    y = np.asarray(y, dtype=float)
    T = y.size
    if cfg.scheme == "fully_adapted":
        if not isinstance(model, LGSS):
            raise ValueError("the fully adapted filter is only available for the LGSS model")
        mu, phi, sigma_v = theta
        X, A, LW, deg = _kernels.fully_adapted_lgss(rng, y, mu, phi, sigma_v, model.sigma_e, n)
        W = np.full((T + 1, n), 1.0 / n)
        if deg:
            W[deg] = np.nan
            return ParticleSystem(X[: deg + 1], A[: deg + 1], LW[: deg + 1], W[: deg + 1], cfg.scheme, degenerate_at=deg)
        return ParticleSystem(X, A, LW, W, cfg.scheme)
    if cfg.scheme == "bootstrap":
        if not model.has_observation_density:
            raise ValueError("bootstrap filtering needs an observation density; use the abc scheme")

        def log_weight(t, x, v):
            return model.log_observation_density(theta, y[t - 1], x)

        return _generic_filter(rng, model, theta, n, T, log_weight, False, cfg.scheme)
    # abc: y holds the perturbed observations
    eps = cfg.epsilon
    log_norm = np.log(eps * np.sqrt(2.0 * np.pi))

    def log_weight(t, x, v):
        d = y[t - 1] - model.psi(model.observe(theta, x, v))
        return -0.5 * d * d / (eps * eps) - log_norm

    with np.errstate(over="ignore", invalid="ignore"):
        return _generic_filter(rng, model, theta, n, T, log_weight, True, cfg.scheme)


def estimate_loglik(ps: ParticleSystem) -> float:
    """Log of the product over t of the average unnormalised weights."""
    if ps.degenerate_at is not None:
        return -np.inf
    if ps.T == 0:
        return 0.0
    lw = ps.log_weights[1:]
    return float(np.sum(logsumexp(lw, axis=1)) - ps.T * np.log(ps.N))


def _xi_terms(ps: ParticleSystem, model, obs, theta, epsilon):
    """Per-particle score increments, shape (T+1, N, p); row 0 is the initial term."""
    T = ps.T
    X = ps.particles
    parents = X[np.arange(T)[:, None], ps.ancestors[1:]]
    xi = np.empty((T + 1, ps.N, model.p))
    xi[0] = model.grad_log_initial(theta, X[0])
    xi[1:] = model.grad_log_transition(theta, parents, X[1:])
    if ps.scheme == "abc":
        with np.errstate(over="ignore", invalid="ignore"):
            v = ps.aux[1:]
            tau = model.observe(theta, X[1:], v)
            resid = obs[:, None] - model.psi(tau)
            coef = resid / (epsilon * epsilon) * model.dpsi(tau)
            xi[1:] += coef[..., None] * model.grad_observe(theta, X[1:], v)
    else:
        xi[1:] += model.grad_log_observation(theta, obs[:, None], X[1:])
    return xi


def estimate_gradient(ps: ParticleSystem, model, data, theta, lag: int, epsilon: float = 0.0) -> np.ndarray:
    """Fixed-lag Fisher-identity estimate of the log-posterior gradient.

    ``data`` is the observation vector for tractable schemes or a
    :class:`PerturbedDataset` for the ABC scheme (whose tolerance is then
    taken from the dataset).
    """
    theta = model.check_theta(theta)
    if ps.degenerate_at is not None:
        return np.full(model.p, np.nan)
    if not hasattr(model, "grad_log_transition"):
        raise NotImplementedError("model provides no gradient terms")
    if isinstance(data, PerturbedDataset):
        obs, epsilon = data.y_check, data.epsilon
    else:
        obs = np.asarray(data, dtype=float)
    if ps.scheme == "abc" and not epsilon > 0:
        raise ValueError("abc gradients need the tolerance epsilon")
    if not 0 <= lag < max(ps.T, 1):
        raise ValueError(f"lag must lie in [0, T) = [0, {ps.T})")
    xi = _xi_terms(ps, model, obs, theta, epsilon)
    per_t = _kernels.fixed_lag_sums(ps.ancestors, ps.weights, xi, lag)
    return per_t.sum(axis=0) + model.grad_log_prior(theta)


def fixed_lag_state_means(ps: ParticleSystem, lag: int) -> np.ndarray:
    """Fixed-lag smoothed means of the latent state, t = 1..T."""
    vals = ps.particles[:, :, None]
    return _kernels.fixed_lag_sums(ps.ancestors, ps.weights, vals, min(lag, max(ps.T - 1, 0)))[1:, 0]


def _estimate(rng, model, obs, data, theta, cfg, gradient):
    ps = _filter(rng, model, obs, theta, cfg)
    ll = estimate_loglik(ps)
    grad = None
    if gradient:
        grad = estimate_gradient(ps, model, data, theta, min(cfg.lag, max(ps.T - 1, 0)), cfg.epsilon)
    return ps, PosteriorEstimate(loglik=ll, logprior=model.log_prior(theta), grad=grad)


def run_smc(rng, model, y, theta, cfg: SmcConfig, gradient: bool = True):
    """Filter a tractable model; returns ``(ParticleSystem, PosteriorEstimate)``.

    Lags longer than the series are clipped to ``T - 1``.
    """
    if cfg.scheme == "abc":
        raise ValueError("use run_smc_abc for the abc scheme")
    return _estimate(rng, model, y, y, theta, cfg, gradient)


def run_smc_abc(rng, model, data: PerturbedDataset, theta, cfg: SmcConfig, gradient: bool = True):
    """SMC-ABC on the perturbed model; the tolerance comes from ``data``."""
    if cfg.scheme != "abc":
        cfg = SmcConfig(cfg.n_particles, data.epsilon, cfg.lag, "abc")
    if not np.isclose(cfg.epsilon, data.epsilon):
        raise ValueError("config tolerance differs from the dataset's")
    return _estimate(rng, model, data.y_check, data, theta, cfg, gradient)


def write_particle_summary(ps: ParticleSystem, path) -> None:
    """Per-step ESS and mean log weight, for debugging."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["t", "ess", "mean_log_weight"])
        ess = ps.ess()
        for t in range(ps.T + 1):
            out.writerow([t, f"{ess[t]:.6g}", f"{np.mean(ps.log_weights[t]):.10g}"])
