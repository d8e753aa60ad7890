import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from kinlmc.cli import run_subcommand
from kinlmc.config import config_hash, csv_text, load_config, resolve_output, write_csv

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def read_csv(path):
    lines = Path(path).read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    return lines[1].split(","), np.array([[float(v) for v in ln.split(",")] for ln in lines[2:]])


def last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_sample_writes_per_replica_rows(tmp_path, capsys):
    out = tmp_path / "s.csv"
    rc = run_subcommand(["sample", "--target", str(CONFIGS / "target_gauss4.ini"), "--kernel", "rm-ulmc",
                         "--steps", "20", "--replicas", "3", "--record-every", "10", "--out", str(out)])
    assert rc == 0
    header, rows = read_csv(out)
    assert header == ["step", "replica", "mean_x_norm", "cov_trace_x", "cov_trace_p", "grad_evals"]
    assert rows.shape == (6, 6)
    np.testing.assert_array_equal(rows[:, 5], [30, 30, 30, 60, 60, 60])
    assert last_json(capsys)["rows"] == 6


def test_sample_is_reproducible(tmp_path):
    args = ["sample", "--target", str(CONFIGS / "target_trig.ini"), "--steps", "10", "--seed", "3"]
    run_subcommand(args + ["--out", str(tmp_path / "a.csv")])
    run_subcommand(args + ["--out", str(tmp_path / "b.csv")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_config_file_supplies_defaults(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"[sample]\ntarget = {CONFIGS / 'target_gauss4.ini'}\nsteps = 5\nrecord-every = 5\n"
                   f"replicas = 2\n")
    out = tmp_path / "s.csv"
    assert run_subcommand(["sample", "--config", str(cfg), "--out", str(out), "--replicas", "4"]) == 0
    _, rows = read_csv(out)
    assert rows.shape[0] == 4


def test_local_error_reports_exponents(tmp_path, capsys):
    out = tmp_path / "le.csv"
    rc = run_subcommand(["local-error", "--target", str(CONFIGS / "target_gauss4.ini"), "--paths", "1000",
                         "--kref", "64", "--resample", "32", "--out", str(out)])
    assert rc == 0
    header, rows = read_csv(out)
    assert header[:5] == ["h", "pos_strong", "mom_strong", "pos_weak", "mom_weak"]
    assert 1.6 < last_json(capsys)["exponents"]["mom_strong"] < 2.4


def test_ibm_coupling_reports_closed_form(tmp_path, capsys):
    rc = run_subcommand(["coupling", "--mode", "ibm-exact", "--gamma", "2", "--dx", "1", "--dp", "0.5",
                         "--out", str(tmp_path / "c.csv")])
    assert rc == 0
    summary = last_json(capsys)
    assert summary["girsanov"] == pytest.approx(summary["closed_form"], rel=1e-6)


def test_certify_passes_and_writes_slack(tmp_path, capsys):
    out = tmp_path / "cert.csv"
    assert run_subcommand(["certify", "--regime", "semiconvex", "--grid", "50", "--out", str(out)]) == 0
    header, rows = read_csv(out)
    assert header[-1] == "relative_slack" and np.all(rows[:, -1] >= 0)


def test_certify_failure_exit_code(tmp_path, capsys, monkeypatch):
    from kinlmc import cli
    from kinlmc.shifts import CertificationReport

    fake = CertificationReport(-0.5, 0.0, -1.0, 1, np.array([[0.0, -1.0, 0.1, 0.2]]))
    monkeypatch.setattr(cli, "lambda_min_certify", lambda *a, **k: fake)
    rc = run_subcommand(["certify", "--grid", "4", "--out", str(tmp_path / "c.csv")])
    assert rc == 1
    assert last_json(capsys)["passed"] is False


def test_bounds_prints_json(capsys):
    rc = run_subcommand(["bounds", "--params", str(CONFIGS / "bounds_strong.ini"), "--calc", "budget",
                         "--theorem", "rmulmc-convex", "--eps", "1e-3"])
    assert rc == 0
    summary = last_json(capsys)
    assert summary["h"] > 0 and summary["N"] > 1


@pytest.mark.parametrize("argv", [
    ["sample", "--target", "/no/such/file.ini"],
    ["bounds", "--params", "/no/such/params.ini"],
    ["sample", "--config", "/no/such/config.ini"],
])
def test_missing_files_exit_2_with_path(argv, capsys):
    assert run_subcommand(argv) == 2
    assert "/no/such/" in capsys.readouterr().err


def test_bad_arguments_exit_2(tmp_path, capsys):
    assert run_subcommand(["sample"]) == 2
    assert run_subcommand(["sample", "--target", str(CONFIGS / "target_gauss4.ini"), "--h", "-1"]) == 2
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[sample]\nbanana = 1\n")
    assert run_subcommand(["sample", "--config", str(cfg)]) == 2
    assert run_subcommand(["accept", "--only", "99"]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "kinlmc", "bounds", "--params", str(CONFIGS / "bounds_weak.ini")],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["calc"] == "harnack"


def test_csv_header_and_hash(tmp_path):
    text = csv_text(["a", "b"], [[1, 0.1], [2, float("nan")]], config_hash({"k": 1}), 5)
    lines = text.splitlines()
    assert lines[0] == f"# config_hash={config_hash({'k': 1})} seed=5"
    assert lines[2] == "1,0.1" and lines[3] == "2,nan"
    with pytest.raises(ValueError):
        csv_text(["a"], [[1, 2]], "x", 0)


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("KINLMC_OUT_DIR", str(tmp_path))
    assert resolve_output("x.csv") == tmp_path / "x.csv"
    p = write_csv(resolve_output("sub/y.csv"), ["a"], [[1]], "h", 0)
    assert p.exists() and not list(p.parent.glob("*.tmp"))


def test_experiment_config_requires_seed(tmp_path):
    cfg = tmp_path / "e.ini"
    cfg.write_text("[experiment]\n[target]\nkind = zero\ndim = 2\n")
    with pytest.raises(Exception, match="seed"):
        load_config(cfg)
    cfg.write_text("[experiment]\nseed = 4\n[grids]\nh = 0.1, 0.05\n[target]\nkind = zero\ndim = 2\n")
    c = load_config(cfg)
    assert c.seed == 4 and c.grids["h"] == [0.1, 0.05] and len(c.hash) == 16
