"""State space models: LGSS and the alpha-stable SV model, plus ABC perturbation.

Both models share the latent AR(1) log-volatility / state process

    x_0 ~ N(mu, sigma_v^2 / (1 - phi^2))
    x_t | x_{t-1} ~ N(mu + phi (x_{t-1} - mu), sigma_v^2)

and differ in the observation map ``tau(x, v)``.  All per-particle methods are
vectorised over leading array axes.  Gradients are w.r.t. the natural
parameters in ``param_names`` order and are stacked on the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dist import Beta, Gamma, TruncatedGaussian, _open_half_pi_uniform, _positive_uniform

LGSS_TRUTH = np.array([0.2, 0.8, 1.0])
ASV_REFERENCE = np.array([0.214, 0.931, 0.268, 1.538])

_MU_PRIOR = TruncatedGaussian(0.0, 0.2, 0.0, 1.0)
_PHI_PRIOR = TruncatedGaussian(0.9, 0.05, -1.0, 1.0)
_SIGMA_PRIOR = Gamma(0.2, 0.2)
_HALF_ALPHA_PRIOR = Beta(6.0, 2.0)

ALPHA_FD_STEP = 1e-6


class _AR1Model:
    """Shared latent dynamics, priors and simulation for the two models."""

    param_names: tuple[str, ...] = ("mu", "phi", "sigma_v")
    aux_dim: int = 2

    @property
    def p(self) -> int:
        return len(self.param_names)

    # -- parameter handling -------------------------------------------------

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.p,):
            raise ValueError(f"{type(self).__name__} expects {self.p} parameters, got shape {theta.shape}")
        return theta

    def is_valid(self, theta) -> bool:
        """True when the latent process is stationary and well defined."""
        mu, phi, sigma = theta[:3]
        return bool(np.isfinite(mu) and abs(phi) < 1.0 and sigma > 0.0)

    # -- prior ----------------------------------------------------------------

    def log_prior(self, theta) -> float:
        theta = self.check_theta(theta)
        mu, phi, sigma = theta[:3]
        return float(_MU_PRIOR.logpdf(mu) + _PHI_PRIOR.logpdf(phi) + _SIGMA_PRIOR.logpdf(sigma))

    def grad_log_prior(self, theta) -> np.ndarray:
        """Prior score; all-NaN outside the support."""
        theta = self.check_theta(theta)
        if not np.isfinite(self.log_prior(theta)):
            return np.full(self.p, np.nan)
        mu, phi, sigma = theta[:3]
        return np.array(
            [_MU_PRIOR.grad_logpdf(mu), _PHI_PRIOR.grad_logpdf(phi), _SIGMA_PRIOR.grad_logpdf(sigma)],
            dtype=float,
        )

    # -- latent dynamics ----------------------------------------------------

    def sample_initial(self, rng, theta, n):
        mu, phi, sigma = theta[:3]
        return mu + sigma / np.sqrt(1.0 - phi * phi) * rng.standard_normal(n)

    def sample_transition(self, rng, theta, x):
        mu, phi, sigma = theta[:3]
        return mu + phi * (x - mu) + sigma * rng.standard_normal(np.shape(x))

    def log_transition_density(self, theta, x_prev, x):
        mu, phi, sigma = theta[:3]
        r = x - mu - phi * (x_prev - mu)
        return -0.5 * r * r / sigma**2 - np.log(sigma) - 0.5 * np.log(2.0 * np.pi)

    def grad_log_initial(self, theta, x0):
        mu, phi, sigma = theta[:3]
        x0 = np.asarray(x0, dtype=float)
        one_m = 1.0 - phi * phi
        q = sigma**2 / one_m
        d = x0 - mu
        ratio = d * d / q - 1.0
        out = np.zeros(x0.shape + (self.p,))
        out[..., 0] = d / q
        out[..., 1] = phi / one_m * ratio
        out[..., 2] = ratio / sigma
        return out

    def grad_log_transition(self, theta, x_prev, x):
        mu, phi, sigma = theta[:3]
        x = np.asarray(x, dtype=float)
        r = x - mu - phi * (x_prev - mu)
        s2 = sigma * sigma
        out = np.zeros(x.shape + (self.p,))
        out[..., 0] = r * (1.0 - phi) / s2
        out[..., 1] = r * (x_prev - mu) / s2
        out[..., 2] = -1.0 / sigma + r * r / (s2 * sigma)
        return out

    # -- observation --------------------------------------------------------

    def sample_aux(self, rng, theta, shape):
        raise NotImplementedError

    def observe(self, theta, x, v):
        raise NotImplementedError

    has_observation_density = False

    def simulate(self, rng, theta, T: int):
        """Simulate ``(x_{0:T}, y_{1:T})`` by pushing auxiliary draws through tau."""
        theta = self.check_theta(theta)
        x = np.empty(T + 1)
        x[0] = self.sample_initial(rng, theta, 1)[0]
        for t in range(1, T + 1):
            x[t] = self.sample_transition(rng, theta, x[t - 1 : t])[0]
        v = self.sample_aux(rng, theta, (T,))
        y = self.observe(theta, x[1:], v) if T > 0 else np.empty(0)
        return x, np.asarray(y, dtype=float)


@dataclass(frozen=True)
class LGSS(_AR1Model):
    """Linear Gaussian SSM with observations ``y_t ~ N(x_t, sigma_e^2)``.

    ``tau`` is the Box-Muller map driven by ``v = (v1, v2)`` uniform draws and
    ``psi`` is the identity.
    """

    sigma_e: float = 0.1
    name: str = field(default="lgss", init=False)

    def __post_init__(self):
        if not self.sigma_e > 0:
            raise ValueError("sigma_e must be positive")

    has_observation_density = True

    def sample_aux(self, rng, theta, shape):
        shape = tuple(np.atleast_1d(shape))
        v = np.empty(shape + (2,))
        v[..., 0] = _positive_uniform(rng, shape)
        v[..., 1] = rng.random(shape)
        return v

    def observe(self, theta, x, v):
        v1, v2 = v[..., 0], v[..., 1]
        return x + self.sigma_e * np.sqrt(-2.0 * np.log(v1)) * np.cos(2.0 * np.pi * v2)

    def grad_observe(self, theta, x, v):
        # sigma_e is fixed, so tau carries no parameter dependence
        return np.zeros(np.shape(x) + (self.p,))

    def psi(self, y):
        return np.asarray(y, dtype=float)

    def dpsi(self, y):
        return np.ones_like(np.asarray(y, dtype=float))

    def log_observation_density(self, theta, y, x):
        r = (y - x) / self.sigma_e
        return -0.5 * r * r - np.log(self.sigma_e) - 0.5 * np.log(2.0 * np.pi)

    def grad_log_observation(self, theta, y, x):
        return np.zeros(np.shape(x) + (self.p,))


@dataclass(frozen=True)
class AlphaSV(_AR1Model):
    """Stochastic volatility with symmetric alpha-stable returns.

    Observations are only simulable: ``v = (w, u)`` with ``w ~ Exp(1)`` and
    ``u ~ U(-pi/2, pi/2)`` feed the Chambers-Mallows-Stuck map scaled by
    ``exp(x/2)``.  ``psi = arctan`` keeps the ABC residuals bounded.
    """

    name: str = field(default="asv", init=False)
    param_names: tuple[str, ...] = field(default=("mu", "phi", "sigma_v", "alpha"), init=False)

    def is_valid(self, theta) -> bool:
        return super().is_valid(theta) and 0.0 < theta[3] <= 2.0 and theta[3] != 1.0

    def log_prior(self, theta) -> float:
        theta = self.check_theta(theta)
        # density of alpha when alpha/2 ~ Beta(6, 2)
        half = _HALF_ALPHA_PRIOR.logpdf(theta[3] / 2.0) - np.log(2.0)
        return super().log_prior(theta) + float(half)

    def grad_log_prior(self, theta) -> np.ndarray:
        theta = self.check_theta(theta)
        if not np.isfinite(self.log_prior(theta)):
            return np.full(self.p, np.nan)
        out = np.empty(4)
        out[:3] = super().grad_log_prior(theta)
        out[3] = 0.5 * _HALF_ALPHA_PRIOR.grad_logpdf(theta[3] / 2.0)
        return out

    def sample_aux(self, rng, theta, shape):
        shape = tuple(np.atleast_1d(shape))
        v = np.empty(shape + (2,))
        v[..., 0] = rng.standard_exponential(shape)
        v[..., 1] = _open_half_pi_uniform(rng, shape)
        return v

    @staticmethod
    def _stable_part(alpha, w, u):
        if alpha == 1.0:
            raise ValueError("alpha = 1 is not supported by the alpha-SV observation map")
        head = np.sin(alpha * u) / np.cos(u) ** (1.0 / alpha)
        return head * (np.cos((alpha - 1.0) * u) / w) ** ((1.0 - alpha) / alpha)

    def observe(self, theta, x, v):
        return np.exp(0.5 * np.asarray(x)) * self._stable_part(theta[3], v[..., 0], v[..., 1])

    def grad_observe(self, theta, x, v):
        """d tau / d theta at fixed ``(x, v)``; alpha by central differences."""
        alpha = theta[3]
        w, u = v[..., 0], v[..., 1]
        h = ALPHA_FD_STEP
        if alpha + h > 2.0:
            lo, hi = alpha - 2.0 * h, alpha
        else:
            lo, hi = alpha - h, alpha + h
        scale = np.exp(0.5 * np.asarray(x))
        out = np.zeros(np.shape(x) + (self.p,))
        out[..., 3] = scale * (self._stable_part(hi, w, u) - self._stable_part(lo, w, u)) / (hi - lo)
        return out

    def psi(self, y):
        return np.arctan(y)

    def dpsi(self, y):
        y = np.asarray(y, dtype=float)
        return 1.0 / (1.0 + y * y)

    def log_observation_density(self, theta, y, x):
        raise NotImplementedError("alpha-stable observation density is intractable; use the ABC path")


def lgss_model(sigma_e: float = 0.1) -> LGSS:
    return LGSS(sigma_e=sigma_e)


def asv_model() -> AlphaSV:
    return AlphaSV()


def get_model(name: str, **kwargs):
    if name == "lgss":
        return LGSS(**kwargs)
    if name == "asv":
        return AlphaSV()
    raise ValueError(f"unknown model {name!r}")


# ---------------------------------------------------------------------------
# ABC perturbation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PerturbedDataset:
    """Observations mapped through ``psi`` and jittered once by the kernel."""

    y_raw: np.ndarray
    y_check: np.ndarray
    epsilon: float
    z: np.ndarray
    kernel: str = "gaussian"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not (len(self.y_raw) == len(self.y_check) == len(self.z)):
            raise ValueError("perturbed dataset arrays must share length T")

    @property
    def T(self) -> int:
        return len(self.y_check)


def perturb_dataset(rng, y_raw, psi, epsilon: float, kernel: str = "gaussian") -> PerturbedDataset:
    if kernel != "gaussian":
        raise ValueError(f"unsupported kernel {kernel!r}")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    y_raw = np.asarray(y_raw, dtype=float)
    z = rng.standard_normal(y_raw.shape)
    return PerturbedDataset(y_raw=y_raw, y_check=psi(y_raw) + epsilon * z, epsilon=float(epsilon), z=z, kernel=kernel)


def log_returns(prices) -> np.ndarray:
    """Percentage log-returns ``100 (log s_t - log s_{t-1})``."""
    prices = np.asarray(prices, dtype=float)
    if prices.ndim != 1 or prices.size < 2:
        raise ValueError("need at least two prices")
    bad = np.flatnonzero(~(prices > 0))
    if bad.size:
        raise ValueError(f"non-positive price at row {bad[0] + 1}")
    return 100.0 * np.diff(np.log(prices))
