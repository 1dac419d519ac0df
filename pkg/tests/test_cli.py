import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qpmh.cli import ConfigError, RunConfig, main, read_trace
from qpmh.models import LGSS_TRUTH


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


# -- configuration -----------------------------------------------------------


configs = st.builds(
    dict,
    model=st.sampled_from(["lgss"]),
    sigma_e=st.floats(0.01, 1.0),
    seed=st.integers(0, 2**32),
    replicates=st.integers(1, 20),
    synthetic=st.builds(dict, T=st.integers(0, 500), seed=st.integers(0, 99),
                        theta=st.none() | st.lists(st.floats(-1, 1), min_size=3, max_size=3)),
    smc=st.builds(dict, n_particles=st.integers(1, 5000), lag=st.integers(0, 20),
                  scheme=st.sampled_from(["bootstrap", "fully_adapted"])),
    proposal=st.builds(dict, kind=st.sampled_from(["pmh0", "pmh1", "pmh2", "qpmh2", "pmh0,qpmh2"]),
                       memory=st.integers(2, 200), delta=st.floats(1.0, 1e4)),
    chain=st.integers(1, 10_000).flatmap(lambda kb: st.builds(dict, K_b=st.just(kb), K=st.integers(kb + 1, kb + 5000))),
)


@given(configs)
def test_config_round_trip(raw):
    cfg = RunConfig.from_dict(raw)
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert again.to_dict() == cfg.to_dict()


def test_config_file_round_trip(tmp_path):
    cfg = RunConfig(model="asv", smc=RunConfig().smc.__class__(200, 0.1, 12, "abc"))
    cfg.to_json(tmp_path / "c.json")
    assert RunConfig.from_json(tmp_path / "c.json") == cfg


@pytest.mark.parametrize("raw", [
    {"model": "garch"},
    {"chain": {"K": 10, "K_b": 10}},
    {"data": "/nonexistent/file.csv"},
    {"model": "asv"},
    {"unknown": 1},
    {"proposal": {"kind": "hmc"}},
    {"synthetic": {"theta": [0.1, 0.2]}},
    {"smc": {"scheme": "abc", "epsilon": 0.0}},
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(raw)


def test_qpmh2_config_without_preconditioner_is_valid():
    cfg = RunConfig.from_dict({"proposal": {"kind": "qpmh2"}})
    assert cfg.proposal.precond is None
    assert np.array_equal(cfg.initial_theta(), LGSS_TRUTH)


# -- commands ----------------------------------------------------------------


def test_simulate_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--T", "250", "--seed", "3", "--output", str(a)]) == 0
    assert main(["simulate", "--T", "250", "--seed", "3", "--output", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = _rows(a)
    assert rows[0] == ["t", "x", "y"] and len(rows) == 251


def test_simulate_empty_series(tmp_path):
    out = tmp_path / "e.csv"
    assert main(["simulate", "--T", "0", "--output", str(out)]) == 0
    assert out.read_text().strip() == "t,x,y"


def test_simulate_asv_heavy_tails(tmp_path):
    out = tmp_path / "asv.csv"
    assert main(["simulate", "--model", "asv", "--T", "1000", "--output", str(out)]) == 0
    y = np.array([float(r[2]) for r in _rows(out)[1:]])
    assert np.abs(y).max() > 3 * y.std()


def test_ingest(tmp_path):
    prices = tmp_path / "p.csv"
    prices.write_text("date,price\n2020-01-01,100\n2020-01-02,110\n2020-01-03,110\n")
    out = tmp_path / "r.csv"
    assert main(["ingest", str(prices), "--output", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == ["t", "y"]
    assert float(rows[1][1]) == pytest.approx(9.531017980432477, abs=1e-12)
    assert float(rows[2][1]) == 0.0


def test_ingest_bad_price_is_config_error(tmp_path, capsys):
    prices = tmp_path / "p.csv"
    prices.write_text("date,price\n1,100\n2,-3\n")
    assert main(["ingest", str(prices), "--output", str(tmp_path / "r.csv")]) == 1
    assert "row 2" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path):
    assert main(["run-pmh", "--iterations", "10", "--burnin", "10", "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run-pmh", "--config", str(bad)]) == 1


def test_runtime_error_exit_code(tmp_path):
    # a start outside the prior support is only detected when the chain starts
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"chain": {"K": 5, "K_b": 1, "theta0": [0.2, 0.99999, -1.0]},
                               "synthetic": {"T": 10}, "proposal": {"kind": "qpmh2"}}))
    assert main(["run-pmh", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_sweep_single_tolerance(tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep-epsilon", "--epsilons", "0.1", "--replicates", "2", "--T", "50", "--out", str(out)]) == 0
    rows = _rows(out / "sweep.csv")
    assert len(rows) == 1 + 4 and {r[1] for r in rows[1:]} == {"loglik", "grad_mu", "grad_phi", "grad_sigma_v"}
    assert all(r[0] == "0.1" for r in rows[1:])


def test_sweep_requires_lgss(tmp_path):
    assert main(["sweep-epsilon", "--model", "asv", "--replicates", "1", "--out", str(tmp_path)]) == 1


def test_run_pmh_outputs_and_diagnose(tmp_path):
    out = tmp_path / "run"
    code = main(["run-pmh", "--proposal", "qpmh2", "--iterations", "300", "--burnin", "100",
                 "--T", "60", "--seed", "4", "--out", str(out)])
    assert code == 0
    trace = out / "trace_qpmh2_r000.csv"
    rows = _rows(trace)
    assert rows[0] == ["k", "theta_1", "theta_2", "theta_3", "loglik", "accepted"] and len(rows) == 301
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["seed"] == 4 and meta["runs"][0]["kind"] == "qpmh2"
    assert RunConfig.from_json(out / "config.json").chain.K == 300
    thetas, acc = read_trace(trace)
    assert thetas.shape == (300, 3) and acc.shape == (300,)

    diag = tmp_path / "diag"
    assert main(["diagnose", str(trace), "--burnin", "100", "--out", str(diag)]) == 0
    rep = json.loads((diag / "mixing.json").read_text())
    assert len(rep["if_adapted"]) == 3
    assert main(["diagnose", str(tmp_path / "missing.csv")]) == 1


def test_run_pmh_is_deterministic(tmp_path):
    args = ["run-pmh", "--proposal", "qpmh2", "--iterations", "120", "--burnin", "20", "--T", "30"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "trace_qpmh2_r000.csv").read_bytes() == (tmp_path / "b" / "trace_qpmh2_r000.csv").read_bytes()


def test_benchmark_mode_table(tmp_path):
    out = tmp_path / "bench"
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"proposal": {"kind": "pmh0,qpmh2", "precond": np.diag([30.0, 1000.0, 600.0]).tolist()},
                               "chain": {"K": 200, "K_b": 50}, "synthetic": {"T": 40}, "replicates": 2, "workers": 2}))
    assert main(["run-pmh", "--config", str(cfg), "--out", str(out)]) == 0
    rows = _rows(out / "if_table.csv")
    assert rows[0][:3] == ["rule", "kind", "acceptance"] and len(rows) == 1 + 4


def test_asv_run_exports_volatility(tmp_path):
    out = tmp_path / "asv"
    code = main(["run-pmh", "--model", "asv", "--epsilon", "0.1", "--particles", "100", "--proposal", "qpmh2",
                 "--iterations", "40", "--burnin", "10", "--T", "30", "--out", str(out)])
    assert code == 0
    rows = _rows(out / "volatility.csv")
    assert rows[0] == ["t", "log_volatility"] and len(rows) == 31


def test_data_file_input(tmp_path):
    data = tmp_path / "d.csv"
    assert main(["simulate", "--T", "40", "--output", str(data)]) == 0
    out = tmp_path / "o"
    assert main(["run-pmh", "--data", str(data), "--iterations", "30", "--burnin", "5", "--out", str(out)]) == 0
    assert json.loads((out / "metadata.json").read_text())["T"] == 40
