"""Exact Kalman filter / RTS smoother for the scalar LGSS model.

Used as the ground-truth oracle for the particle estimators: the
log-likelihood comes from the prediction-error decomposition and the score
from the Fisher identity evaluated with smoothed first and second moments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KalmanResult:
    loglik: float
    score: np.ndarray
    filtered_means: np.ndarray
    filtered_variances: np.ndarray
    smoothed_means: np.ndarray
    smoothed_variances: np.ndarray


def kalman_filter_smoother(theta, y, sigma_e: float = 0.1) -> KalmanResult:
    """Run the filter and smoother for ``theta = (mu, phi, sigma_v)``.

    The state starts from its stationary law
    ``x_0 ~ N(mu, sigma_v^2 / (1 - phi^2))``.  Output arrays cover
    ``t = 1..T``; the score is d log p(y_{1:T}) / d theta.
    """
    mu, phi, sigma_v = (float(v) for v in np.asarray(theta, dtype=float)[:3])
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(y)) and np.isfinite([mu, phi, sigma_v, sigma_e]).all()):
        raise ValueError("non-finite input to the Kalman filter")
    if sigma_v <= 0 or sigma_e <= 0:
        raise ValueError("sigma_v and sigma_e must be positive")
    if abs(phi) >= 1:
        raise ValueError("stationary initialisation needs |phi| < 1")

    T = y.size
    q = sigma_v**2
    r = sigma_e**2
    # index 0 holds x_0, indices 1..T the observed steps
    m_f = np.empty(T + 1)
    P_f = np.empty(T + 1)
    m_p = np.empty(T + 1)
    P_p = np.empty(T + 1)
    m_f[0] = mu
    P_f[0] = q / (1.0 - phi * phi)
    loglik = 0.0
    for t in range(1, T + 1):
        m_p[t] = mu + phi * (m_f[t - 1] - mu)
        P_p[t] = phi * phi * P_f[t - 1] + q
        S = P_p[t] + r
        e = y[t - 1] - m_p[t]
        loglik += -0.5 * (np.log(2.0 * np.pi * S) + e * e / S)
        K = P_p[t] / S
        m_f[t] = m_p[t] + K * e
        P_f[t] = (1.0 - K) * P_p[t]

    m_s = m_f.copy()
    P_s = P_f.copy()
    # cross[t] = Cov(x_t, x_{t-1} | y_{1:T})
    cross = np.zeros(T + 1)
    for t in range(T - 1, -1, -1):
        J = P_f[t] * phi / P_p[t + 1]
        m_s[t] = m_f[t] + J * (m_s[t + 1] - m_p[t + 1])
        P_s[t] = P_f[t] + J * J * (P_s[t + 1] - P_p[t + 1])
        cross[t + 1] = J * P_s[t + 1]

    score = _fisher_score(mu, phi, sigma_v, m_s, P_s, cross)
    return KalmanResult(
        loglik=float(loglik),
        score=score,
        filtered_means=m_f[1:],
        filtered_variances=P_f[1:],
        smoothed_means=m_s[1:],
        smoothed_variances=P_s[1:],
    )


def _fisher_score(mu, phi, sigma, m, P, cross):
    s2 = sigma * sigma
    # residual r_t = x_t - mu - phi (x_{t-1} - mu), t = 1..T
    dc = m[:-1] - mu
    er = m[1:] - mu - phi * dc
    # E[r_t (x_{t-1} - mu)] and E[r_t^2]
    e_r_prev = er * dc + cross[1:] - phi * P[:-1]
    e_r2 = er * er + P[1:] + phi * phi * P[:-1] - 2.0 * phi * cross[1:]

    d_mu = np.sum(er) * (1.0 - phi) / s2
    d_phi = np.sum(e_r_prev) / s2
    d_sigma = -er.size / sigma + np.sum(e_r2) / (s2 * sigma)

    one_m = 1.0 - phi * phi
    q0 = s2 / one_m
    ratio = ((m[0] - mu) ** 2 + P[0]) / q0 - 1.0
    d_mu += (m[0] - mu) / q0
    d_phi += phi / one_m * ratio
    d_sigma += ratio / sigma
    return np.array([d_mu, d_phi, d_sigma])


def perturbed_loglik(theta, y_check, sigma_e: float, epsilon: float) -> float:
    """Exact log-likelihood of the identity-psi perturbed LGSS data."""
    return kalman_filter_smoother(theta, y_check, np.hypot(sigma_e, epsilon)).loglik
