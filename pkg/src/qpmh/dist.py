"""Random streams, the alpha-stable sampler and the prior distribution zoo."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

HALF_PI = 0.5 * np.pi
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

# |alpha - 1| below this routes to the exact alpha = 1 branch
ALPHA_ONE_BAND = 1e-8


@dataclass(frozen=True)
class RngStream:
    """A reproducible, splittable random stream.

    Streams are keyed by ``(seed, stream_id)`` and built from
    :class:`numpy.random.SeedSequence` spawn keys, so distinct ids give
    statistically independent generators and identical ids give identical
    draws.  ``path`` extends the key for nested streams (see :meth:`child`).
    """

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self.path))
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, (*self.path, int(index)))


def make_rng(seed: int, stream_id: int = 0) -> np.random.Generator:
    return RngStream(seed, stream_id).generator()


# ---------------------------------------------------------------------------
# Uniform building blocks
# ---------------------------------------------------------------------------


def _positive_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform draws on (0, 1); exact zeros are redrawn, not clamped."""
    v = rng.random(size)
    zero = v == 0.0
    while np.any(zero):
        v[zero] = rng.random(int(zero.sum()))
        zero = v == 0.0
    return v


def _open_half_pi_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform on the open interval (-pi/2, pi/2)."""
    return np.pi * (_positive_uniform(rng, size) - 0.5)


# ---------------------------------------------------------------------------
# Box-Muller
# ---------------------------------------------------------------------------


def box_muller(v1, v2, mean=0.0, sd=1.0):
    """Deterministic Box-Muller map ``mean + sd*sqrt(-2 log v1)*cos(2 pi v2)``."""
    v1 = np.asarray(v1, dtype=float)
    if np.any(v1 <= 0.0) or np.any(v1 > 1.0):
        raise ValueError("v1 must lie in (0, 1]")
    return mean + sd * np.sqrt(-2.0 * np.log(v1)) * np.cos(2.0 * np.pi * np.asarray(v2))


def sample_gaussian_boxmuller(rng: np.random.Generator, mean=0.0, sd=1.0, size=None):
    if sd <= 0:
        raise ValueError("sd must be positive")
    shape = () if size is None else size
    v1 = _positive_uniform(rng, shape)
    v2 = rng.random(shape)
    out = box_muller(v1, v2, mean, sd)
    return float(out) if size is None else out


# ---------------------------------------------------------------------------
# alpha-stable (Chambers-Mallows-Stuck)
# ---------------------------------------------------------------------------


def _check_stable(alpha, beta):
    if not (0.0 < alpha <= 2.0):
        raise ValueError(f"alpha must be in (0, 2], got {alpha}")
    if not (-1.0 <= beta <= 1.0):
        raise ValueError(f"beta must be in [-1, 1], got {beta}")


@dataclass(frozen=True)
class StableParams:
    alpha: float
    beta: float = 0.0
    c: float = 1.0
    mu: float = 0.0

    def __post_init__(self):
        _check_stable(self.alpha, self.beta)
        if not self.c > 0:
            raise ValueError(f"scale c must be positive, got {self.c}")


def cms_transform(w, u, alpha: float, beta: float):
    """Map ``w ~ Exp(1)`` and ``u ~ U(-pi/2, pi/2)`` to a standard
    ``A(alpha, beta, 1, 0)`` variate.

    Both branches are exact; alpha within ``ALPHA_ONE_BAND`` of one uses the
    alpha = 1 formula since the general one is singular there.
    """
    _check_stable(alpha, beta)
    w = np.asarray(w, dtype=float)
    u = np.asarray(u, dtype=float)
    if abs(alpha - 1.0) < ALPHA_ONE_BAND:
        b = HALF_PI + beta * u
        return (2.0 / np.pi) * (b * np.tan(u) - beta * np.log(HALF_PI * w * np.cos(u) / b))
    shift = np.arctan(beta * np.tan(HALF_PI * alpha)) / alpha
    head = np.sin(alpha * (u + shift)) / (np.cos(alpha * shift) * np.cos(u)) ** (1.0 / alpha)
    tail = (np.cos(alpha * shift + (alpha - 1.0) * u) / w) ** ((1.0 - alpha) / alpha)
    return head * tail


def sample_standard_stable(rng: np.random.Generator, alpha: float, beta: float = 0.0, size=None):
    _check_stable(alpha, beta)
    shape = () if size is None else size
    w = rng.standard_exponential(shape)
    u = _open_half_pi_uniform(rng, shape)
    out = cms_transform(w, u, alpha, beta)
    return float(out) if size is None else out


def sample_stable(rng: np.random.Generator, params: StableParams, size=None):
    """Draw from ``A(alpha, beta, c, mu)`` by scaling a standard variate."""
    y = sample_standard_stable(rng, params.alpha, params.beta, size)
    a, b, c, mu = params.alpha, params.beta, params.c, params.mu
    if abs(a - 1.0) < ALPHA_ONE_BAND:
        return c * y + (mu + b * (2.0 / np.pi) * c * np.log(c))
    return c * y + mu


def stable_cf(t, alpha: float, beta: float = 0.0, c: float = 1.0, mu: float = 0.0):
    """Characteristic function of ``A(alpha, beta, c, mu)``."""
    t = np.asarray(t, dtype=float)
    ct = np.abs(c * t) ** alpha
    if abs(alpha - 1.0) < ALPHA_ONE_BAND:
        with np.errstate(divide="ignore", invalid="ignore"):
            skew = np.where(t == 0, 0.0, (2.0 / np.pi) * np.sign(t) * np.log(np.abs(t)))
        return np.exp(1j * t * mu - ct * (1.0 + 1j * beta * skew))
    return np.exp(1j * t * mu - ct * (1.0 - 1j * beta * np.tan(HALF_PI * alpha) * np.sign(t)))


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------
# Each family exposes pdf/logpdf/grad_logpdf (derivative w.r.t. x) and a
# sampler.  logpdf is -inf outside the support.


def _outside(x, lo, hi):
    return (x <= lo) | (x >= hi)


@dataclass(frozen=True)
class Gaussian:
    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("sd must be positive")

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.sd
        return -0.5 * z * z - np.log(self.sd) - LOG_SQRT_2PI

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.sd
        return np.exp(-0.5 * z * z) / (self.sd * np.sqrt(2.0 * np.pi))

    def grad_logpdf(self, x):
        return -(np.asarray(x, dtype=float) - self.mean) / self.sd**2

    def sample(self, rng, size=None):
        return rng.normal(self.mean, self.sd, size)


@dataclass(frozen=True)
class TruncatedGaussian:
    """Gaussian ``N(mean, sd^2)`` restricted to ``(lower, upper)``."""

    mean: float
    sd: float
    lower: float
    upper: float
    log_mass: float = field(init=False, repr=False)

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("sd must be positive")
        if not self.lower < self.upper:
            raise ValueError("need lower < upper")
        a = (self.lower - self.mean) / self.sd
        b = (self.upper - self.mean) / self.sd
        # log(Phi(b) - Phi(a)), stable in both tails
        if a > 0:
            mass = special.log_ndtr(-a) + np.log1p(-np.exp(special.log_ndtr(-b) - special.log_ndtr(-a)))
        else:
            mass = special.log_ndtr(b) + np.log1p(-np.exp(special.log_ndtr(a) - special.log_ndtr(b)))
        object.__setattr__(self, "log_mass", float(mass))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x - self.mean) / self.sd
        out = -0.5 * z * z - np.log(self.sd) - LOG_SQRT_2PI - self.log_mass
        return np.where(_outside(x, self.lower, self.upper), -np.inf, out)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x - self.mean) / self.sd
        dens = np.exp(-0.5 * z * z) / (self.sd * np.sqrt(2.0 * np.pi) * np.exp(self.log_mass))
        return np.where(_outside(x, self.lower, self.upper), 0.0, dens)

    def grad_logpdf(self, x):
        return -(np.asarray(x, dtype=float) - self.mean) / self.sd**2

    def sample(self, rng, size=None):
        # rejection from the untruncated law
        n = 1 if size is None else int(np.prod(size))
        out = np.empty(n)
        filled = 0
        while filled < n:
            draw = rng.normal(self.mean, self.sd, 2 * (n - filled) + 8)
            keep = draw[(draw > self.lower) & (draw < self.upper)][: n - filled]
            out[filled : filled + keep.size] = keep
            filled += keep.size
        return float(out[0]) if size is None else out.reshape(size)


@dataclass(frozen=True)
class Gamma:
    """Gamma law with shape ``a`` and rate ``b`` (mean ``a/b``)."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("Gamma shape and rate must be positive")

    @property
    def mean(self):
        return self.a / self.b

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.a * np.log(self.b) - special.gammaln(self.a) + (self.a - 1.0) * np.log(x) - self.b * x
        return np.where(x <= 0, -np.inf, out)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = self.b**self.a / special.gamma(self.a) * x ** (self.a - 1.0) * np.exp(-self.b * x)
        return np.where(x <= 0, 0.0, dens)

    def grad_logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return (self.a - 1.0) / x - self.b

    def sample(self, rng, size=None):
        return rng.gamma(self.a, 1.0 / self.b, size)


@dataclass(frozen=True)
class Beta:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("Beta parameters must be positive")

    @property
    def mode(self):
        if self.a <= 1 or self.b <= 1:
            raise ValueError("mode is interior only for a, b > 1")
        return (self.a - 1.0) / (self.a + self.b - 2.0)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (self.a - 1.0) * np.log(x) + (self.b - 1.0) * np.log1p(-x) - special.betaln(self.a, self.b)
        return np.where(_outside(x, 0.0, 1.0), -np.inf, out)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = x ** (self.a - 1.0) * (1.0 - x) ** (self.b - 1.0) / special.beta(self.a, self.b)
        return np.where(_outside(x, 0.0, 1.0), 0.0, dens)

    def grad_logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return (self.a - 1.0) / x - (self.b - 1.0) / (1.0 - x)

    def sample(self, rng, size=None):
        return rng.beta(self.a, self.b, size)


@dataclass(frozen=True)
class Uniform:
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("need lower < upper")

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lower) & (x <= self.upper)
        return np.where(inside, -np.log(self.upper - self.lower), -np.inf)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lower) & (x <= self.upper)
        return np.where(inside, 1.0 / (self.upper - self.lower), 0.0)

    def grad_logpdf(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def sample(self, rng, size=None):
        return rng.uniform(self.lower, self.upper, size)


@dataclass(frozen=True)
class Exponential:
    rate: float = 1.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x < 0, -np.inf, np.log(self.rate) - self.rate * x)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x < 0, 0.0, self.rate * np.exp(-self.rate * x))

    def grad_logpdf(self, x):
        return np.full_like(np.asarray(x, dtype=float), -self.rate)

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size)
