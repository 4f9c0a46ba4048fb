import csv
import logging
import os

import numpy as np
import pytest

from fiberspec.cli import main
from fiberspec.invert import read_tuning_curve


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for k in list(os.environ):
        if k.startswith("BFS_"):
            monkeypatch.delenv(k)


SHORT = ["--filter", "beta", "--detuning", "0.25", "--duration", "0.5", "--seed", "7"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    out = tmp_path_factory.mktemp("camp")
    code = main(["campaign", "--out", str(out), "--filters", "alpha,beta,gamma,delta",
                 "--detunings", "0,0.1", "--duration", "12", "--no-events"])
    assert code == 0
    return out


def test_config_show_prints_every_default(capsys):
    assert main(["config", "show"]) == 0
    out = capsys.readouterr().out
    for key in ("length_km", "sigma_det_ps", "dead_time_ps", "dark_rate_hz", "sync_rate_hz",
                "edge_slope_db_per_nm", "mu_hat"):
        assert key in out
    assert "# digest " in out


def test_environment_override(monkeypatch, capsys):
    monkeypatch.setenv("BFS_RUN__DURATION_S", "42.5")
    assert main(["config", "show"]) == 0
    assert "duration_s: 42.5" in capsys.readouterr().out
    monkeypatch.setenv("BFS_RUN__DURATION_S", "soon")
    assert main(["config", "show"]) == 2


def test_simulate_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.bfse", tmp_path / "b.bfse"
    assert main(["simulate", *SHORT, "--out", str(a)]) == 0
    assert main(["simulate", *SHORT, "--out", str(b), "--workers", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.csv"
    assert main(["simulate", *SHORT, "--out", str(c), "--format", "csv"]) == 0
    assert c.read_text().splitlines()[1] == "channel,pulse_index,time_ps"


def test_simulate_validation_exit_codes(tmp_path, capsys):
    assert main(["simulate", "--duration", "0", "--out", str(tmp_path / "x")]) == 2
    assert "run.duration_s" in capsys.readouterr().err
    assert main(["simulate", "--set", "signal_chain.efficiency=2", "--out",
                 str(tmp_path / "x")]) == 2


def test_simulate_degenerate_filter_warns(tmp_path, caplog):
    caplog.set_level(logging.WARNING, logger="fiberspec")
    assert main(["simulate", "--filter", "delta", "--duration", "0.05",
                 "--out", str(tmp_path / "d.bfse")]) == 0
    assert any("overlap" in r.getMessage() for r in caplog.records)


def test_histogram_stage(tmp_path):
    ev = tmp_path / "run.bfse"
    assert main(["simulate", *SHORT[:-4], "--duration", "20", "--seed", "7", "--out", str(ev)]) == 0
    table = tmp_path / "cal.txt"
    args = ["histogram", str(ev), "--filter", "beta", "--detuning", "0.25", "--duration", "20",
            "--seed", "7", "--out", str(tmp_path / "h"), "--table", str(table),
            "--min-coincidences", "1000"]
    assert main(args) == 0
    for suffix in (".hist", ".signal.marg", ".idler.marg", ".edges"):
        assert (tmp_path / ("h" + suffix)).exists()
    rows = [ln for ln in table.read_text().splitlines() if not ln.startswith("#")]
    assert len(rows) == 2
    # the events were written under a different configuration
    wrong = ["histogram", str(ev), "--filter", "beta", "--out", str(tmp_path / "w")]
    assert main(wrong) == 2
    assert main(wrong + ["--force"]) == 0


def test_calibrate_errors(tmp_path):
    t = tmp_path / "t.txt"
    t.write_text("1498 1531.6 9770\n1567.6 1604.4 13400\n")
    assert main(["calibrate", str(t), "--out", str(tmp_path / "f")]) == 2
    t.write_text("1498 1531.6 9770\n1567.6 1604.4 13400\n1522 1537 4400\n")
    assert main(["calibrate", str(t), "--pin", "length=20.56", "--pin", "s0=0.0885",
                 "--out", str(tmp_path / "f")]) == 2
    assert main(["calibrate", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "f")]) == 4


def test_campaign_outputs(workspace):
    tc = read_tuning_curve(workspace / "tuning_curve.txt")
    assert tc.detuning_axis.tolist() == [0.0, 0.1]
    assert tc.span() > 100
    fit = (workspace / "fit.txt").read_text()
    assert "kappa_ps_nm2" in fit and "cov_01" in fit


def test_tuning_curve_command_reproduces_campaign(workspace, tmp_path):
    out = tmp_path / "again.txt"
    assert main(["tuning-curve", str(workspace), "--out", str(out)]) == 0
    assert out.read_bytes() == (workspace / "tuning_curve.txt").read_bytes()


def test_invert_command(workspace, tmp_path):
    out = tmp_path / "beta.spec"
    args = ["invert", str(workspace / "beta_p0.100.hist"), str(workspace / "fit.txt"),
            "--edges", str(workspace / "beta_p0.100.edges"), "--filter", "beta",
            "--detuning", "0.1", "--duration", "12", "--force", "--out", str(out)]
    assert main(args) == 0
    assert "normalization = \"corrected\"" in out.read_text()


def read_csv(path):
    with open(path) as fh:
        r = csv.reader(fh)
        return next(r), np.array([[float(x) for x in row] for row in r])


def test_export_plot(workspace, tmp_path):
    base = str(tmp_path / "tc")
    assert main(["export-plot", str(workspace / "tuning_curve.txt"), "--out", base]) == 0
    head, rows = read_csv(base + ".csv")
    assert len(head) == 4 and head[0].startswith("detuning") and head[3].startswith("mask")
    assert set(np.unique(rows[:, 3])) <= {0.0, 1.0}
    assert main(["export-plot", str(workspace / "fit.txt"), "--out", base + "f"]) == 0
    head, rows = read_csv(base + "f.csv")
    assert any("predicted" in h for h in head) and any("measured" in h for h in head)
    assert main(["export-plot", str(workspace / "fit.txt"), "--format", "gnuplot-script",
                 "--out", base + "g"]) == 0
    assert os.path.exists(base + "g.gp") and os.path.exists(base + "g.dat")


def test_export_marginal(tmp_path):
    ev = tmp_path / "e.bfse"
    assert main(["simulate", *SHORT, "--out", str(ev)]) == 0
    assert main(["histogram", str(ev), *SHORT, "--out", str(tmp_path / "h")]) == 0
    assert main(["export-plot", str(tmp_path / "h.signal.marg"), "--out", str(tmp_path / "m")]) == 0
    head, rows = read_csv(tmp_path / "m.csv")
    assert head == ["t_ps", "counts"]
    assert rows.shape[0] == 383


def test_missing_input_is_io_error(tmp_path):
    assert main(["histogram", str(tmp_path / "nope.bfse"), "--out", str(tmp_path / "h")]) == 4
    assert main(["export-plot", str(tmp_path / "nope.txt")]) == 4
