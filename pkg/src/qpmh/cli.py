"""Command-line interface: ``qpmh {simulate,ingest,sweep-epsilon,run-pmh,diagnose}``.

Runs are driven by a JSON :class:`RunConfig` plus flag overrides.  Exit
codes: 0 on success, 1 on configuration errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import experiments
from .diagnostics import mixing_report, posterior_summary, write_sweep_csv
from .dist import RngStream
from .models import ASV_REFERENCE, LGSS_TRUTH, get_model, log_returns
from .smc import SCHEMES, SmcConfig, fixed_lag_state_means, run_smc, run_smc_abc
from .pmh import KINDS

log = logging.getLogger("qpmh")

MODELS = ("lgss", "asv")
DEFAULT_THETA = {"lgss": LGSS_TRUTH, "asv": ASV_REFERENCE}


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (exit code 1)."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    T: int = 250
    theta: Optional[list] = None
    seed: int = 0


@dataclass
class SmcSettings:
    n_particles: int = 50
    epsilon: float = 0.0
    lag: int = 12
    scheme: str = "fully_adapted"

    def build(self) -> SmcConfig:
        return SmcConfig(self.n_particles, self.epsilon, self.lag, self.scheme)


@dataclass
class ProposalSettings:
    # comma-separated kinds run side by side in benchmark mode
    kind: str = "qpmh2"
    step: Optional[float] = None
    memory: int = 100
    delta: float = 1000.0
    n_hyb: int = 2500
    precond: Optional[list] = None

    @property
    def kinds(self) -> tuple:
        return tuple(k.strip() for k in self.kind.split(",") if k.strip())


@dataclass
class ChainSettings:
    K: int = 15000
    K_b: int = 5000
    theta0: Optional[list] = None


@dataclass
class RunConfig:
    model: str = "lgss"
    data: Optional[str] = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    sigma_e: float = 0.1
    smc: SmcSettings = field(default_factory=SmcSettings)
    proposal: ProposalSettings = field(default_factory=ProposalSettings)
    chain: ChainSettings = field(default_factory=ChainSettings)
    replicates: int = 1
    seed: int = 0
    workers: int = 1
    epsilons: list = field(default_factory=lambda: list(experiments.SWEEP_EPSILONS))
    output_dir: str = "out"

    # -- serialisation ----------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        nested = {"synthetic": SyntheticSpec, "smc": SmcSettings, "proposal": ProposalSettings, "chain": ChainSettings}
        kwargs = {}
        for key, val in _check_keys(cls, raw, "config").items():
            if key in nested:
                if not isinstance(val, dict):
                    raise ConfigError(f"config.{key} must be an object")
                val = nested[key](**_check_keys(nested[key], val, f"config.{key}"))
            kwargs[key] = val
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(raw)

    # -- validation -------------------------------------------------------

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.data is not None and not Path(self.data).is_file():
            raise ConfigError(f"data file does not exist: {self.data}")
        if not self.chain.K > self.chain.K_b >= 0:
            raise ConfigError("need K > K_b >= 0")
        if self.replicates < 1 or self.workers < 1:
            raise ConfigError("replicates and workers must be at least 1")
        if self.synthetic.T < 0:
            raise ConfigError("synthetic T must be non-negative")
        if self.smc.scheme not in SCHEMES:
            raise ConfigError(f"smc.scheme must be one of {SCHEMES}")
        if self.model == "asv" and self.smc.scheme != "abc":
            raise ConfigError("the asv model has no observation density; use smc.scheme = 'abc'")
        if self.model != "lgss" and self.smc.scheme == "fully_adapted":
            raise ConfigError("the fully adapted filter exists only for lgss")
        try:
            self.smc.build()
        except ValueError as exc:
            raise ConfigError(f"smc: {exc}") from exc
        if not self.proposal.kinds:
            raise ConfigError("proposal.kind is empty")
        for k in self.proposal.kinds:
            if k not in KINDS:
                raise ConfigError(f"unknown proposal kind {k!r}; choose from {KINDS}")
        if self.proposal.memory < 2 or not self.proposal.delta > 0:
            raise ConfigError("proposal needs memory >= 2 and delta > 0")
        p = len(DEFAULT_THETA[self.model])
        for name, vec in (("synthetic.theta", self.synthetic.theta), ("chain.theta0", self.chain.theta0)):
            if vec is not None and len(vec) != p:
                raise ConfigError(f"{name} must have {p} entries for model {self.model}")
        if self.proposal.precond is not None and np.shape(self.proposal.precond) != (p, p):
            raise ConfigError(f"proposal.precond must be {p}x{p}")
        if any(not e > 0 for e in self.epsilons):
            raise ConfigError("sweep tolerances must be positive")

    # -- derived ----------------------------------------------------------

    def build_model(self):
        return get_model(self.model, sigma_e=self.sigma_e) if self.model == "lgss" else get_model(self.model)

    def true_theta(self) -> np.ndarray:
        th = self.synthetic.theta
        return np.asarray(th if th is not None else DEFAULT_THETA[self.model], dtype=float)

    def initial_theta(self) -> np.ndarray:
        th = self.chain.theta0
        return np.asarray(th, dtype=float) if th is not None else self.true_theta()


def _check_keys(cls, raw: dict, where: str) -> dict:
    known = {f.name for f in fields(cls)}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(extra)}")
    return raw


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    """Apply command-line flags on top of a config, then re-validate."""
    raw = cfg.to_dict()
    if getattr(args, "model", None) is not None:
        raw["model"] = args.model
        if args.model == "asv" and raw["smc"]["scheme"] != "abc":
            raw["smc"]["scheme"] = "abc"
            raw["smc"]["epsilon"] = raw["smc"]["epsilon"] or 0.1
    if getattr(args, "data", None) is not None:
        raw["data"] = args.data
    if getattr(args, "proposal", None) is not None:
        raw["proposal"]["kind"] = args.proposal
    if getattr(args, "epsilon", None) is not None:
        raw["smc"]["epsilon"] = args.epsilon
        if args.epsilon > 0:
            raw["smc"]["scheme"] = "abc"
    if getattr(args, "particles", None) is not None:
        raw["smc"]["n_particles"] = args.particles
    if getattr(args, "iterations", None) is not None:
        raw["chain"]["K"] = args.iterations
    if getattr(args, "burnin", None) is not None:
        raw["chain"]["K_b"] = args.burnin
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "replicates", None) is not None:
        raw["replicates"] = args.replicates
    if getattr(args, "workers", None) is not None:
        raw["workers"] = args.workers
    if getattr(args, "out", None) is not None:
        raw["output_dir"] = args.out
    if getattr(args, "epsilons", None) is not None:
        raw["epsilons"] = args.epsilons
    if getattr(args, "T", None) is not None:
        raw["synthetic"]["T"] = args.T
    try:
        return RunConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if getattr(args, "config", None) else RunConfig()
    return apply_overrides(cfg, args)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def write_dataset(path, x, y) -> None:
    """``t,x,y`` rows for t = 1..T; header only when T = 0."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["t", "x", "y"])
        for t in range(len(y)):
            out.writerow([t + 1, _fmt(x[t + 1]), _fmt(y[t])])


def read_observations(path) -> np.ndarray:
    """Column ``y`` of a dataset or returns CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "y" not in reader.fieldnames:
            raise ConfigError(f"{path}: expected a 'y' column")
        return np.array([float(row["y"]) for row in reader])


def read_prices(path) -> np.ndarray:
    """Prices from a ``date,price`` CSV (or the last column if unnamed)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty file")
    header = [h.strip().lower() for h in rows[0]]
    col = header.index("price") if "price" in header else len(header) - 1
    prices = []
    for i, row in enumerate(rows[1:], start=2):
        try:
            prices.append(float(row[col]))
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"{path}: unreadable price on line {i}") from exc
    return np.array(prices)


def write_returns(path, y) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["t", "y"])
        for t, v in enumerate(y, start=1):
            out.writerow([t, _fmt(v)])


def write_trace(path, hist) -> None:
    p = hist.thetas.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["k"] + [f"theta_{j + 1}" for j in range(p)] + ["loglik", "accepted"])
        for k in range(hist.K):
            out.writerow([k + 1] + [_fmt(v) for v in hist.thetas[k]] + [_fmt(hist.loglik[k]), int(hist.accepted[k])])


def read_trace(path):
    if not Path(path).is_file():
        raise ConfigError(f"trace file does not exist: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = [c for c in (reader.fieldnames or []) if c.startswith("theta_")]
        if not cols:
            raise ConfigError(f"{path}: no theta_* columns")
        rows = list(reader)
    thetas = np.array([[float(r[c]) for c in cols] for r in rows]).reshape(len(rows), len(cols))
    accepted = np.array([int(r["accepted"]) for r in rows]) if rows and "accepted" in rows[0] else None
    return thetas, accepted


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o)}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def observations(cfg: RunConfig) -> np.ndarray:
    if cfg.data is not None:
        return read_observations(cfg.data)
    _, y = experiments.simulate_dataset(cfg.build_model(), cfg.true_theta(), cfg.synthetic.T, cfg.synthetic.seed)
    return y


def cmd_simulate(cfg: RunConfig, output=None) -> Path:
    out = Path(output) if output else Path(cfg.output_dir) / "data.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    x, y = experiments.simulate_dataset(cfg.build_model(), cfg.true_theta(), cfg.synthetic.T, cfg.synthetic.seed)
    write_dataset(out, x, y)
    log.info("wrote %d observations to %s", len(y), out)
    return out


def cmd_ingest(prices_path, output) -> Path:
    prices = read_prices(prices_path)
    try:
        y = log_returns(prices)
    except ValueError as exc:
        raise ConfigError(f"{prices_path}: {exc}") from exc
    out = Path(output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_returns(out, y)
    log.info("wrote %d returns to %s", y.size, out)
    return out


def cmd_sweep_epsilon(cfg: RunConfig) -> Path:
    if cfg.model != "lgss":
        raise ConfigError("the tolerance sweep needs the Kalman oracle (model = lgss)")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.build_model()
    y = observations(cfg)
    res = experiments.epsilon_sweep(
        model, y, cfg.true_theta(), cfg.epsilons, cfg.replicates, cfg.seed,
        n_abc=cfg.smc.n_particles if cfg.smc.scheme == "abc" else 2500,
        lag=cfg.smc.lag, workers=cfg.workers,
    )
    write_sweep_csv(res.rows, out / "sweep.csv")
    with open(out / "sweep_errors.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epsilon", "replicate", "quantity", "error"])
        for q, ref in res.reference.items():
            for r, e in enumerate(ref):
                w.writerow([0, r, q, _fmt(e)])
        for q, by_eps in res.errors.items():
            for eps, errs in by_eps.items():
                for r, e in enumerate(errs):
                    w.writerow([f"{eps:g}", r, q, _fmt(e)])
    cfg.to_json(out / "config.json")
    return out / "sweep.csv"


def cmd_run_pmh(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.build_model()
    y = observations(cfg)
    smc = cfg.smc.build()
    target = experiments.make_target(model, y, smc, cfg.seed)
    theta0 = cfg.initial_theta()
    prop = cfg.proposal
    precond = None if prop.precond is None else np.asarray(prop.precond, dtype=float)

    t0 = time.perf_counter()
    runs = experiments.proposal_benchmark(
        target, theta0, kinds=prop.kinds, n_iter=cfg.chain.K, burnin=cfg.chain.K_b,
        replicates=cfg.replicates, seed=cfg.seed, memory=prop.memory, delta=prop.delta,
        n_hyb=prop.n_hyb, precond=precond, step=prop.step, workers=cfg.workers,
    )
    elapsed = time.perf_counter() - t0

    names = list(model.param_names)
    meta_runs = []
    for run in runs:
        stem = f"{run.kind}_r{run.replicate:03d}"
        hist = run.history
        write_trace(out / f"trace_{stem}.csv", hist)
        rep = mixing_report(hist.thetas, cfg.chain.K_b, hist.accepted, names)
        rep.extra = {"fallbacks": hist.fallbacks, "degenerate_warnings": hist.degenerate_warnings}
        rep.to_json(out / f"mixing_{stem}.json")
        summ = posterior_summary(hist.thetas, cfg.chain.K_b)
        summ.write_csv(out / f"summary_{stem}.csv", names)
        summ.write_density_tables(out / f"density_{stem}.csv", names)
        meta_runs.append({
            "kind": run.kind, "replicate": run.replicate, "acceptance": run.acceptance,
            "if_adapted": run.if_adapted, "if_fixed": run.if_fixed,
            "posterior_mean": summ.mean, "fallbacks": hist.fallbacks,
        })
    if cfg.replicates > 1 or len(prop.kinds) > 1:
        rows = experiments.if_table(runs)
        with open(out / "if_table.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    if cfg.model == "asv":
        _export_volatility(out / "volatility.csv", model, target, runs[0], cfg)

    cfg.to_json(out / "config.json")
    _write_json(out / "metadata.json", {
        "model": cfg.model, "T": int(np.size(y)), "theta0": theta0, "seed": cfg.seed,
        "elapsed_seconds": elapsed, "runs": meta_runs,
    })
    log.info("finished %d chain(s) in %.1f s; outputs in %s", len(runs), elapsed, out)
    return out


def _export_volatility(path, model, target, run, cfg: RunConfig) -> None:
    """Smoothed log-volatility from one final filter run at the posterior mean."""
    theta_hat = run.history.posterior_mean(cfg.chain.K_b)
    rng = RngStream(cfg.seed, 10_000).generator()
    smc = cfg.smc.build()
    if smc.scheme == "abc":
        ps, _ = run_smc_abc(rng, model, target.data, theta_hat, smc, gradient=False)
    else:
        ps, _ = run_smc(rng, model, target.data, theta_hat, smc, gradient=False)
    if ps.degenerate_at is not None:
        raise RuntimeError(f"filter degenerated at t = {ps.degenerate_at} during the volatility export")
    xs = fixed_lag_state_means(ps, smc.lag)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "log_volatility"])
        for t, v in enumerate(xs, start=1):
            w.writerow([t, _fmt(v)])


def cmd_diagnose(trace_path, burnin: int, out_dir) -> Path:
    thetas, accepted = read_trace(trace_path)
    if not 0 <= burnin < thetas.shape[0]:
        raise ConfigError(f"burn-in {burnin} outside [0, {thetas.shape[0]})")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mixing_report(thetas, burnin, accepted).to_json(out / "mixing.json")
    summ = posterior_summary(thetas, burnin)
    summ.write_csv(out / "summary.csv")
    summ.write_density_tables(out / "density.csv")
    return out


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--data", help="observations CSV with a 'y' column")
    p.add_argument("--proposal", help="proposal kind, or comma-separated kinds for a benchmark")
    p.add_argument("--epsilon", type=float, help="ABC tolerance (> 0 switches to the abc scheme)")
    p.add_argument("--particles", type=int, metavar="N")
    p.add_argument("--iterations", type=int, metavar="K")
    p.add_argument("--burnin", type=int, metavar="Kb")
    p.add_argument("--seed", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--workers", type=int, help="worker threads for replicates")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--T", type=int, help="synthetic series length")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpmh", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a synthetic dataset")
    _add_run_flags(p)
    p.add_argument("--output", help="dataset CSV (default OUT/data.csv)")

    p = sub.add_parser("ingest", help="convert a price CSV into percentage log-returns")
    p.add_argument("prices")
    p.add_argument("--output", required=True)

    p = sub.add_parser("sweep-epsilon", help="ABC tolerance sweep against the Kalman oracle")
    _add_run_flags(p)
    p.add_argument("--epsilons", type=float, nargs="+")

    p = sub.add_parser("run-pmh", help="run PMH chains (benchmark mode with replicates or several kinds)")
    _add_run_flags(p)

    p = sub.add_parser("diagnose", help="mixing diagnostics and posterior summaries of a trace CSV")
    p.add_argument("trace")
    p.add_argument("--burnin", type=int, default=0)
    p.add_argument("--out", default="diagnostics")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "ingest":
            cmd_ingest(args.prices, args.output)
        elif args.command == "diagnose":
            cmd_diagnose(args.trace, args.burnin, args.out)
        else:
            cfg = load_config(args)
            if args.command == "simulate":
                cmd_simulate(cfg, args.output)
            elif args.command == "sweep-epsilon":
                cmd_sweep_epsilon(cfg)
            else:
                cmd_run_pmh(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
