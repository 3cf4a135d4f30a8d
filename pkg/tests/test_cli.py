import csv
import io
import json

import numpy as np
import pytest

from qreadout import cli
from qreadout import fitting as ft
from qreadout.model import ReadoutConfig


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_simulate_binned_and_continuous(capsys):
    code, out, _ = run(["simulate", "--snr", "30", "--tau-m", "2", "--n-bins", "8", "--seed", "3"], capsys)
    assert code == 0
    table = rows(out)
    assert table[0] == ["l", "psi_bar"] and len(table) == 9
    code, out, _ = run(["simulate", "--snr", "30", "--tau-m", "1", "--kind", "continuous", "--dt", "0.01"], capsys)
    assert code == 0 and len(rows(out)) == 101


def test_distributions_csv_is_deterministic(tmp_path, capsys):
    argv = ["distributions", "--gamma", "4", "--snr", "30", "--tau-m", "1.5", "--n-bins", "11", "--points", "51"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(argv + ["--out", str(a)], capsys)[0] == 0
    assert run(argv + ["--out", str(b)], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    table = rows(a.read_text())
    assert table[0] == ["psi", "pdf_minus", "pdf_plus", "cdf_minus", "cdf_plus"]
    assert len(table) == 52
    # shortest round-trip floats
    x = float(table[10][2])
    assert repr(x) == table[10][2]


def test_manifest_written_and_replayed(tmp_path, capsys):
    out = tmp_path / "d.csv"
    argv = ["distributions", "--gamma", "inf", "--snr", "100", "--tau-m", "0.5", "--n-bins", "3", "--points", "21", "--out", str(out)]
    assert run(argv, capsys)[0] == 0
    manifest = json.loads((tmp_path / "d.csv.manifest.json").read_text())
    assert manifest["command"] == "distributions"
    assert manifest["config"]["gamma"] == "inf"
    assert manifest["seed"] == 0 and manifest["outputs"] == [str(out)]
    assert {"argv", "version", "duration_s"} <= set(manifest)
    first = out.read_bytes()
    out.unlink()
    assert run(["run", "--manifest", str(tmp_path / "d.csv.manifest.json")], capsys)[0] == 0
    assert out.read_bytes() == first


def test_config_merge_flags_win(tmp_path, capsys):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"r": 30, "gamma": 4, "tau_m": 2.0, "n_bins": 4, "seed": 5}))
    code, out, _ = run(["simulate", "--config", str(conf)], capsys)
    assert code == 0 and len(rows(out)) == 5
    code, out2, _ = run(["simulate", "--config", str(conf), "--n-bins", "10"], capsys)
    assert code == 0 and len(rows(out2)) == 11
    code, out3, _ = run(["simulate", "--config", str(conf), "--seed", "5"], capsys)
    assert out3 == out


def test_optimize_json(capsys):
    code, out, _ = run(["optimize", "--filter", "boxcar", "--gamma", "4", "--snr", "250"], capsys)
    assert code == 0
    res = json.loads(out)
    assert res["eps"] == pytest.approx(0.049, abs=0.003)
    assert res["filter"] == "boxcar" and res["n_bins"] == 1.0


def test_optimize_csv_columns(tmp_path, capsys):
    out = tmp_path / "o.csv"
    js = tmp_path / "o.json"
    code, _, _ = run(["optimize", "--filter", "boxcar", "--gamma", "inf", "--snr", "100", "--out", str(out), "--json", str(js)], capsys)
    assert code == 0
    table = rows(out.read_text())
    assert table[0] == ["r", "filter", "gamma", "eps", "nu", "tau_m", "n_bins"]
    assert table[1][2] == "inf"
    assert json.loads(js.read_text())["eps"] == pytest.approx(float(table[1][3]))
    assert json.loads((tmp_path / "o.csv.manifest.json").read_text())["outputs"] == [str(out), str(js)]


def test_scaling_columns(capsys, monkeypatch):
    monkeypatch.setenv("READOUT_THREADS", "1")
    code, out, _ = run(["scaling", "--filter", "boxcar", "--gamma", "inf", "--r-grid", "100,1000,10000"], capsys)
    assert code == 0
    table = rows(out)
    assert table[0][-2:] == ["eps_sqrt_r_over_ln_r", "eps_r_over_ln_r"]
    assert len(table) == 4


def test_ml_benchmark_and_threads(capsys, monkeypatch):
    argv = ["ml-benchmark", "--gamma", "4", "--snr", "30", "--records", "60", "--seed", "2"]
    code, out1, _ = run(argv, capsys)
    assert code == 0
    monkeypatch.setenv("READOUT_THREADS", "3")
    code, out2, _ = run(argv, capsys)
    assert code == 0 and out1 == out2
    assert rows(out1)[0] == ["r", "gamma", "eps", "stderr", "records"]
    assert rows(out1)[1][4] == "60"
    monkeypatch.setenv("READOUT_THREADS", "many")
    assert run(argv, capsys)[0] == 2


def test_estimator_trace(capsys):
    code, out, _ = run(["estimator-trace", "--gamma", "4", "--snr", "30", "--tau-m", "2", "--dt", "0.01"], capsys)
    assert code == 0
    table = rows(out)
    assert table[0] == ["tau_m", "p_plus"] and len(table) == 202
    assert float(table[1][1]) == 0.5


def test_fit_subcommand(tmp_path, capsys):
    cfg = ReadoutConfig(r=110, gamma=4, tau_m=33 * 0.075, n_bins=33, p_plus=0.47)
    raw = ft.synthetic_peaks(cfg, 8000, np.random.default_rng(1), scale=2.0)
    hist = ft.Histogram.from_samples(raw)
    data = tmp_path / "h.csv"
    ft.write_histogram(hist, data)
    code, out, err = run(["fit", "--data", str(data), "--gamma", "4", "--tau-m", "2.5", "--init", "2.0,100,0.08,0.5"], capsys)
    assert code == 0, err
    res = json.loads(out)
    assert {"I", "r", "tau_b", "p_plus", "chi2", "dof"} <= set(res)
    assert res["r"] == pytest.approx(110, rel=0.2)


@pytest.mark.parametrize(
    "argv",
    [
        ["bogus"],
        ["simulate", "--nope"],
        ["simulate", "--tau-m", "2"],
        ["simulate", "--snr", "-1"],
        ["simulate", "--snr", "30", "--n-bins", "2.5"],
        ["optimize", "--snr", "abc"],
        ["fit", "--data", "/nonexistent.csv"],
        ["fit"],
        ["scaling", "--r-grid", "100,200"],
        ["run", "--manifest", "/nonexistent.json"],
    ],
)
def test_usage_errors_exit_2(argv, capsys):
    assert run(argv, capsys)[0] == 2


def test_bad_config_exit_2(tmp_path, capsys):
    conf = tmp_path / "c.json"
    conf.write_text("{not json")
    assert run(["simulate", "--config", str(conf)], capsys)[0] == 2
    conf.write_text(json.dumps({"colour": 1}))
    assert run(["simulate", "--config", str(conf)], capsys)[0] == 2


def test_numerical_failure_exit_1(capsys, monkeypatch):
    from qreadout import error_rate

    def boom(*a, **k):
        raise error_rate.OptimizationError("did not converge")

    monkeypatch.setattr(cli, "optimize_filter", boom)
    code, _, err = run(["optimize", "--snr", "100"], capsys)
    assert code == 1 and "numerical failure" in err
