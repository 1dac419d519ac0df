"""Compiled inner loops for the particle filter and the BFGS recursion.

All kernels draw randomness from a ``numpy.random.Generator`` passed in by
the caller, so seeded streams stay reproducible.
"""

import numba
import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


@numba.njit(cache=True)
def _draw_ancestors(rng, cdf, out):
    # cdf is non-decreasing and ends at the total mass
    n = out.shape[0]
    m = cdf.shape[0]
    total = cdf[m - 1]
    for i in range(n):
        u = rng.random() * total
        lo, hi = 0, m - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if cdf[mid] > u:
                hi = mid
            else:
                lo = mid + 1
        out[i] = lo


@numba.njit(cache=True)
def fully_adapted_lgss(rng, y, mu, phi, sigma_v, sigma_e, n):
    """Fully adapted filter for the scalar LGSS model.

    Returns particles, ancestors and the log predictive weights
    ``log N(y_t; mu + phi (x_{t-1} - mu), sigma_v^2 + sigma_e^2)`` attached
    to the time t-1 particles, plus the first time index at which every
    weight vanished (0 when the filter never degenerated).
    """
    T = y.shape[0]
    X = np.empty((T + 1, n))
    A = np.empty((T + 1, n), dtype=np.int64)
    LW = np.zeros((T + 1, n))
    s2 = sigma_v * sigma_v + sigma_e * sigma_e
    gain = sigma_v * sigma_v / s2
    post_sd = np.sqrt(gain) * sigma_e
    sd0 = sigma_v / np.sqrt(1.0 - phi * phi)
    for i in range(n):
        X[0, i] = mu + sd0 * rng.standard_normal()
        A[0, i] = i
    pred = np.empty(n)
    cdf = np.empty(n)
    for t in range(1, T + 1):
        yt = y[t - 1]
        mx = -np.inf
        for i in range(n):
            pred[i] = mu + phi * (X[t - 1, i] - mu)
            e = yt - pred[i]
            lw = -0.5 * (LOG_2PI + np.log(s2) + e * e / s2)
            LW[t, i] = lw
            if lw > mx:
                mx = lw
        if not np.isfinite(mx):
            return X, A, LW, t
        acc = 0.0
        for i in range(n):
            acc += np.exp(LW[t, i] - mx)
            cdf[i] = acc
        _draw_ancestors(rng, cdf, A[t])
        for i in range(n):
            m = pred[A[t, i]]
            X[t, i] = m + gain * (yt - m) + post_sd * rng.standard_normal()
    return X, A, LW, 0


@numba.njit(cache=True)
def fixed_lag_sums(ancestors, weights, values, lag):
    """Fixed-lag smoothed sums ``sum_i w_{k_t}^i values[t, lineage(i)]``.

    ``k_t = min(t + lag, T)`` and the lineage maps particle i at time k_t to
    its ancestor at time t.  Returns an array of shape (T + 1, p).
    """
    T1, n = weights.shape
    T = T1 - 1
    p = values.shape[2]
    out = np.zeros((T1, p))
    lin = np.empty((n, lag + 1), dtype=np.int64)
    nxt = np.empty((n, lag + 1), dtype=np.int64)
    for i in range(n):
        lin[i, 0] = i
    for s in range(T1):
        if s > 0:
            a = ancestors[s]
            depth = min(s, lag)
            for i in range(n):
                nxt[i, 0] = i
                ai = a[i]
                for j in range(1, depth + 1):
                    nxt[i, j] = lin[ai, j - 1]
            lin, nxt = nxt, lin
        if s < T:
            t = s - lag
            if t >= 0:
                for i in range(n):
                    w = weights[s, i]
                    k = lin[i, lag]
                    for d in range(p):
                        out[t, d] += w * values[t, k, d]
        else:
            for t in range(max(0, T - lag), T1):
                j = T - t
                for i in range(n):
                    w = weights[T, i]
                    k = lin[i, j]
                    for d in range(p):
                        out[t, d] += w * values[t, k, d]
    return out


@numba.njit(cache=True)
def bfgs_recursion(S, G, threshold):
    """Inverse-Hessian recursion over difference pairs (rows of S and G).

    Pairs with curvature ``g's <= threshold`` are skipped.  Returns the
    matrix and the number of pairs used.
    """
    m, p = S.shape
    H = np.zeros((p, p))
    used = 0
    eye = np.eye(p)
    for l in range(m):
        s = S[l]
        g = G[l]
        gs = 0.0
        gg = 0.0
        for d in range(p):
            gs += g[d] * s[d]
            gg += g[d] * g[d]
        if not gs > threshold:
            continue
        rho = 1.0 / gs
        if used == 0:
            H = (gs / gg) * eye
        left = eye - rho * np.outer(s, g)
        H = left @ H @ left.T + rho * np.outer(s, s)
        used += 1
    return H, used
