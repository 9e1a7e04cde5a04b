import csv
import json

import numpy as np
import pytest

from cylmag import __version__
from cylmag.cli import BETA_COLUMNS, EXIT_FAIL, EXIT_PASS, EXIT_USAGE, SIM_COLUMNS, main


def run_json(capsys, *argv):
    code = main(list(argv))
    return code, json.loads(capsys.readouterr().out)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def test_catalog_lists_systems(capsys):
    code, listing = run_json(capsys, "catalog")
    assert code == EXIT_PASS
    assert [s["id"] for s in listing["systems"]] == ["SYSTEM_I", "SYSTEM_II", "SYSTEM_III"]
    assert listing["tool_version"] == __version__
    names = [p["name"] for p in listing["systems"][0]["parameters"]]
    assert names[:5] == ["rho1", "rho2", "psi1", "psi2", "W0"]


def test_catalog_text(capsys):
    assert main(["catalog", "--format", "text"]) == EXIT_PASS
    out = capsys.readouterr().out
    assert out.startswith("SYSTEM_I:") and "beta1 = -0.5" in out


@pytest.mark.parametrize("argv", [
    ["verify", "--system", "SYSTEM_I", "--check", "gauge", "--check", "determining"],
    ["verify", "--system", "SYSTEM_II", "--check", "beta", "--check", "poisson", "--samples", "50"],
    ["verify", "--system", "SYSTEM_III", "--base", "II", "--check", "determining", "--check", "gauge"],
    ["verify", "--system", "UNIFORM", "--param", "b=0.5", "--check", "poisson"],
])
def test_verify_passes(capsys, argv):
    code, report = run_json(capsys, *argv)
    assert code == EXIT_PASS
    assert report["passed"] is True
    assert all(r["passed"] for r in report["checks"].values())


def test_verify_numeric_beta(capsys):
    code, report = run_json(capsys, "verify", "--system", "SYSTEM_II", "--beta", "numeric",
                            "--check", "beta", "--check", "determining")
    assert code == EXIT_PASS
    assert report["checks"]["beta"]["kind"] == "numeric"


def test_verify_fails_without_correction(capsys):
    code, report = run_json(capsys, "verify", "--system", "SYSTEM_II", "--no-hbar-correction",
                            "--check", "quantum", "--probes", "2", "--samples", "10", "--hbar", "1")
    assert code == EXIT_FAIL
    assert report["passed"] is False
    worst = max(r["max_relative"] for r in report["checks"]["quantum"]["residuals"])
    assert worst > 1e-3


def test_quantum_check_reports_scaling(capsys):
    code, report = run_json(capsys, "verify", "--system", "SYSTEM_II", "--check", "quantum", "--probes", "2",
                            "--samples", "10", "--scaling")
    assert code == EXIT_PASS
    q = report["checks"]["quantum"]
    assert q["without_correction"]["max_relative"] > 1e-3
    assert q["hbar_scaling"]["exponent"] == pytest.approx(2.0, abs=0.05)


def test_report_is_byte_stable(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}.json"
        argv = ["verify", "--system", "SYSTEM_I", "--check", "poisson", "--check", "quantum",
                "--samples", "20", "--probes", "2", "--seed", "7", "--out", str(out)]
        assert main(argv) == EXIT_PASS
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_seed_changes_report(tmp_path):
    data = []
    for seed in ("1", "2"):
        out = tmp_path / f"s{seed}.json"
        main(["verify", "--check", "poisson", "--samples", "10", "--seed", seed, "--out", str(out)])
        data.append(out.read_text())
    assert data[0] != data[1]


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("system = SYSTEM_III\nparam.W0 = 2.0\nparams = rho1=0.8\nsamples = 10\nchecks = gauge\n")
    code, report = run_json(capsys, "verify", "--config", str(cfg))
    assert code == EXIT_PASS
    assert report["system"] == "SYSTEM_III"
    assert report["params"]["W0"] == 2.0 and report["params"]["rho1"] == 0.8
    code, report = run_json(capsys, "verify", "--config", str(cfg), "--system", "SYSTEM_I", "--param", "W0=3")
    assert report["system"] == "SYSTEM_I" and report["params"]["W0"] == 3.0


@pytest.mark.parametrize("argv", [
    ["verify", "--system", "SYSTEM_IV"],
    ["verify", "--param", "rho2"],
    ["verify", "--param", "rho2=abc"],
    ["verify", "--param", "rho2=0"],
    ["verify", "--param", "nonsense=1"],
    ["verify", "--system", "SYSTEM_III", "--param", "sigma0=1"],
    ["verify", "--hbar", "one"],
    ["solve-beta", "--param", "beta1=0.5"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert capsys.readouterr().err.startswith("error:")


def test_bad_config_files(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("this is not a key value line\n")
    assert main(["verify", "--config", str(bad)]) == EXIT_USAGE
    unknown = tmp_path / "unknown.cfg"
    unknown.write_text("colour = blue\n")
    assert main(["verify", "--config", str(unknown)]) == EXIT_USAGE
    assert main(["verify", "--config", str(tmp_path / "missing.cfg")]) == EXIT_USAGE


def test_argparse_rejects_unknown_check():
    with pytest.raises(SystemExit) as info:
        main(["verify", "--check", "everything"])
    assert info.value.code == 2


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert __version__ in capsys.readouterr().out


def test_simulate_writes_csv_and_summary(tmp_path):
    out = tmp_path / "traj.csv"
    assert main(["simulate", "--system", "SYSTEM_I", "--t-end", "2", "--n-out", "21", "--out", str(out)]) == EXIT_PASS
    header, data = read_csv(out)
    assert tuple(header) == SIM_COLUMNS
    assert data.shape == (21, len(SIM_COLUMNS))
    assert data[0, 1:7] == pytest.approx([1.2, 0.3, 0.1, 0.2, -0.3, 0.5])
    summary = json.loads((tmp_path / "traj.csv.json").read_text())
    assert summary["status"] == "ok"
    assert max(summary["max_drift"].values()) < 1e-8


def test_simulate_reports_axis_approach(tmp_path):
    out = tmp_path / "axis.csv"
    code = main(["simulate", "--system", "FREE", "--initial", "1,0,0,-1,0,0", "--t-end", "3", "--out", str(out),
                 "--summary", str(tmp_path / "s.json")])
    assert code == EXIT_PASS
    summary = json.loads((tmp_path / "s.json").read_text())
    assert summary["status"] == "axis_approach"
    _, data = read_csv(out)
    assert data[-1, 0] == pytest.approx(0.99, abs=1e-9)


def test_solve_beta_closed(tmp_path):
    out = tmp_path / "beta.csv"
    assert main(["solve-beta", "--points", "101", "--out", str(out)]) == EXIT_PASS
    header, data = read_csv(out)
    assert tuple(header) == BETA_COLUMNS
    assert data[-1, 0] == pytest.approx(4 * np.pi)
    assert np.max(np.abs(data[:, 4:6])) < 1e-10


def test_solve_beta_numeric(tmp_path):
    out = tmp_path / "beta.csv"
    assert main(["solve-beta", "--mode", "numeric", "--span", "6.5", "--out", str(out)]) == EXIT_PASS
    header, data = read_csv(out)
    assert header[-1] == "closed_form_diff"
    assert np.max(np.abs(data[:, -1])) < 1e-8
    assert np.max(np.abs(data[:, 6:8])) < 1e-8


def test_solve_beta_numeric_vanishing(tmp_path, capsys):
    out = tmp_path / "beta.csv"
    argv = ["solve-beta", "--mode", "numeric", "--param", "b0=0.5", "--param", "db0=-1", "--param", "ddb0=-10",
            "--out", str(out)]
    assert main(argv) == EXIT_PASS
    assert "warning" in capsys.readouterr().err
    _, data = read_csv(out)
    assert data[-1, 1] == pytest.approx(1e-4, rel=1e-3)
