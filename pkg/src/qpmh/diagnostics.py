"""Mixing diagnostics, posterior summaries and the tolerance-sweep tables."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

FIXED_LAG = 1000


def trace_mean(trace, burnin: int = 0) -> np.ndarray:
    """Per-parameter mean of ``trace[burnin:]``.

    Each column is copied to contiguous memory first so numpy's pairwise
    summation is used; every mean reported by the package goes through here,
    which keeps them bitwise identical.
    """
    trace = np.asarray(trace, dtype=float)
    if trace.ndim == 1:
        trace = trace[:, None]
    window = trace[burnin:]
    if window.shape[0] == 0:
        raise ValueError("empty post-burn-in window (need K > K_b)")
    return np.array([np.mean(np.ascontiguousarray(window[:, j])) for j in range(window.shape[1])])


def autocorrelation(series, max_lag: int) -> np.ndarray:
    """Biased sample ACF (1/n normalisation) for lags ``0..max_lag``."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < max_lag + 2:
        raise ValueError(f"series of length {n} too short for max_lag={max_lag}")
    x = x - x.mean()
    var = np.dot(x, x) / n
    if var == 0.0:
        raise ValueError("constant series: autocorrelation undefined (zero variance)")
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1] / n
    return acov / var


def inefficiency_factor(series, rule="adapted") -> float:
    """``1 + 2 sum_{l=1}^{L} acf_l``.

    ``rule="adapted"`` takes L as the first lag whose |acf| drops below
    ``2 / sqrt(n)``; an integer (or ``"fixed"``, meaning 1000) fixes L.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if rule == "adapted":
        rho = autocorrelation(x, n - 2)
        below = np.flatnonzero(np.abs(rho[1:]) < 2.0 / np.sqrt(n))
        L = int(below[0]) + 1 if below.size else n - 2
    else:
        L = FIXED_LAG if rule == "fixed" else int(rule)
        rho = autocorrelation(x, L)
    return float(1.0 + 2.0 * np.sum(rho[1 : L + 1]))


@dataclass
class MixingReport:
    names: list
    if_adapted: list
    if_fixed: list
    acceptance_rate: float
    acf: dict
    mean: list
    sd: list
    quantiles: dict
    extra: dict = field(default_factory=dict)

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2)


def mixing_report(trace, burnin: int, accepted=None, names=None, max_lag: int = 250) -> MixingReport:
    window = np.asarray(trace, dtype=float)[burnin:]
    if window.ndim == 1:
        window = window[:, None]
    p = window.shape[1]
    names = list(names) if names is not None else [f"theta_{j + 1}" for j in range(p)]
    n = window.shape[0]
    fixed_L = min(FIXED_LAG, n - 2)
    summary = posterior_summary(window, 0)
    acc = float(np.mean(np.asarray(accepted)[burnin:])) if accepted is not None else float("nan")
    lags = min(max_lag, n - 2)
    return MixingReport(
        names=names,
        if_adapted=[inefficiency_factor(window[:, j], "adapted") for j in range(p)],
        if_fixed=[inefficiency_factor(window[:, j], fixed_L) for j in range(p)],
        acceptance_rate=acc,
        acf={nm: autocorrelation(window[:, j], lags).tolist() for j, nm in enumerate(names)},
        mean=summary.mean.tolist(),
        sd=summary.sd.tolist(),
        quantiles={str(q): summary.quantiles[i].tolist() for i, q in enumerate(summary.probs)},
    )


@dataclass
class PosteriorSummary:
    mean: np.ndarray
    sd: np.ndarray
    probs: tuple
    quantiles: np.ndarray  # (len(probs), p)
    histograms: list  # per parameter: (edges, density)
    kdes: list  # per parameter: (grid, density)

    def write_csv(self, path, names=None) -> None:
        p = self.mean.size
        names = names or [f"theta_{j + 1}" for j in range(p)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(["parameter", "mean", "sd"] + [f"q{100 * q:g}" for q in self.probs])
            for j in range(p):
                out.writerow([names[j], repr(self.mean[j]), repr(self.sd[j])] + [repr(v) for v in self.quantiles[:, j]])

    def write_density_tables(self, path, names=None) -> None:
        p = self.mean.size
        names = names or [f"theta_{j + 1}" for j in range(p)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(["parameter", "kind", "x", "density"])
            for j in range(p):
                edges, dens = self.histograms[j]
                centres = 0.5 * (edges[1:] + edges[:-1])
                for x, d in zip(centres, dens):
                    out.writerow([names[j], "hist", f"{x:.10g}", f"{d:.10g}"])
                for x, d in zip(*self.kdes[j]):
                    out.writerow([names[j], "kde", f"{x:.10g}", f"{d:.10g}"])


def posterior_summary(trace, burnin: int, probs=(0.025, 0.5, 0.975), bins: int = 64, grid: int = 256) -> PosteriorSummary:
    """Moments, quantiles, 64-bin histograms and Silverman-bandwidth KDEs."""
    trace = np.asarray(trace, dtype=float)
    if trace.ndim == 1:
        trace = trace[:, None]
    mean = trace_mean(trace, burnin)
    window = trace[burnin:]
    sd = window.std(axis=0, ddof=1) if window.shape[0] > 1 else np.zeros(window.shape[1])
    quants = np.quantile(window, probs, axis=0)
    hists, kdes = [], []
    for j in range(window.shape[1]):
        col = window[:, j]
        if np.ptp(col) == 0:
            hists.append((np.array([col[0] - 0.5, col[0] + 0.5]), np.array([1.0])))
            kdes.append((np.array([col[0]]), np.array([np.inf])))
            continue
        dens, edges = np.histogram(col, bins=bins, density=True)
        hists.append((edges, dens))
        kde = stats.gaussian_kde(col, bw_method="silverman")
        xs = np.linspace(col.min(), col.max(), grid)
        kdes.append((xs, kde(xs)))
    return PosteriorSummary(mean, sd, tuple(probs), quants, hists, kdes)


# ---------------------------------------------------------------------------
# tolerance sweep
# ---------------------------------------------------------------------------


def log_l1_error(estimate, truth) -> np.ndarray:
    return np.log10(np.abs(np.asarray(estimate, dtype=float) - truth))


@dataclass
class SweepRow:
    epsilon: float
    quantity: str
    median: float
    minimum: float
    maximum: float
    reference: float


def epsilon_sweep_report(errors: dict, reference: dict) -> list:
    """Per-tolerance median/min/max of log10 absolute errors.

    ``errors[quantity][epsilon]`` holds the replicate errors (linear scale)
    of SMC-ABC and ``reference[quantity]`` those of the standard filter; the
    reference median is attached to every row as the comparison line.
    """
    rows = []
    for quantity, by_eps in errors.items():
        ref = float(np.median(log_l1_error(reference[quantity], 0.0)))
        for eps in sorted(by_eps):
            e = log_l1_error(by_eps[eps], 0.0)
            rows.append(SweepRow(float(eps), quantity, float(np.median(e)), float(e.min()), float(e.max()), ref))
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["epsilon", "quantity", "median_log10_err", "min_log10_err", "max_log10_err", "smc_median_log10_err"])
        for r in rows:
            out.writerow([f"{r.epsilon:g}", r.quantity, f"{r.median:.6f}", f"{r.minimum:.6f}", f"{r.maximum:.6f}", f"{r.reference:.6f}"])
