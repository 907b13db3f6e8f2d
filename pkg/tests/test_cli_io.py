import csv
import json
from pathlib import Path

import numpy as np
import pytest

from chquench.cli import main
from chquench.io import OUTPUT_ROOT_ENV, fmt, resolve_run_dir

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
ACCEPT = str(CONFIGS / "acceptance.toml")


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _manifest_complete(run: Path):
    man = json.loads((run / "manifest.json").read_text())
    listed = {f["name"] for f in man["files"]}
    on_disk = {p.name for p in run.iterdir()} - {"manifest.json"}
    assert listed == on_disk
    return man


def test_validate_config_cites_a6(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[cost]\nbeta = [1.0, 1.0, 0.1, 0.0, 0.01]\n")
    assert main(["validate-config", str(cfg)]) == 1
    err = capsys.readouterr().err
    assert "(A6)" in err and f"{cfg}:2:" in err


def test_validate_config_ok(capsys):
    assert main(["validate-config", ACCEPT]) == 0
    assert "65 nodes" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["simulate"], ["frobnicate", ACCEPT], ["simulate", ACCEPT, "--bogus"],
    ["simulate", "/nonexistent.toml"], ["simulate", ACCEPT, "--alpha", "2"],
])
def test_invalid_invocations_exit_1(argv, tmp_path):
    try:
        code = main(argv + ["--out", str(tmp_path)])
    except SystemExit as exc:
        code = exc.code
    assert code == 1


def test_simulate_stationary(tmp_path):
    assert main(["simulate", str(CONFIGS / "stationary.toml"), "--out", str(tmp_path)]) == 0
    _manifest_complete(tmp_path)
    for f in sorted(tmp_path.glob("state_t*.csv")):
        y = np.array([float(r["y"]) for r in _rows(f)])
        assert np.max(np.abs(y - 0.3)) <= 1e-9
    assert len(list(tmp_path.glob("state_t*.csv"))) == 11


def test_simulate_exports(tmp_path):
    assert main(["simulate", ACCEPT, "--out", str(tmp_path)]) == 0
    man = _manifest_complete(tmp_path)
    assert man["kind"] == "simulate" and len(man["config_sha256"]) == 64
    mass = np.array([float(r["mass"]) for r in _rows(tmp_path / "metrics.csv")])
    assert np.ptp(mass) <= 1e-9
    rows = _rows(tmp_path / "metrics.csv")
    assert all(float(r["bound_margin"]) > 0 for r in rows)
    assert list(_rows(tmp_path / "boundary.csv")[0]) == ["time", "node", "y_Gamma", "u_Gamma",
                                                         "q_Gamma"]
    assert len(_rows(tmp_path / "boundary.csv")) == 21 * 2


def test_check_gradient_passes(tmp_path, capsys):
    assert main(["check-gradient", ACCEPT, "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    best = float(out.split()[3])
    assert best <= 1e-6
    _manifest_complete(tmp_path)
    assert len(_rows(tmp_path / "gradient_check.csv")) == 80


def test_quench_and_optimize(tmp_path):
    assert main(["quench", ACCEPT, "--out", str(tmp_path / "q")]) == 0
    alphas = [float(r["alpha"]) for r in _rows(tmp_path / "q" / "quench.csv")]
    assert len(alphas) == 11 and all(b < a for a, b in zip(alphas, alphas[1:]))
    _manifest_complete(tmp_path / "q")
    assert main(["optimize", ACCEPT, "--alpha", "0.25", "--out", str(tmp_path / "o")]) == 0
    res = json.loads((tmp_path / "o" / "result.json").read_text())
    assert res["alpha"] == 0.25 and res["converged"] and not res["M0_active"]
    _manifest_complete(tmp_path / "o")
    assert (tmp_path / "o" / "adjoint_t0020.csv").exists()
    assert json.loads((tmp_path / "o" / "adjoint.json").read_text())["kind"] == "adjoint"


def test_adapted_quench(tmp_path):
    cfg = tmp_path / "a.toml"
    cfg.write_text('[quench]\nadapted = true\nalpha_min = 0.125\n')
    assert main(["quench", str(cfg), "--out", str(tmp_path / "run")]) == 0
    res = json.loads((tmp_path / "run" / "result.json").read_text())
    assert res["anchor_penalty"] <= 1e-4


def test_oracle_compare(tmp_path):
    cfg = tmp_path / "o.toml"
    cfg.write_text('[quench]\nalpha_min = 0.0625\n[solver]\ndecay_threshold = 1.0\n')
    assert main(["oracle-compare", str(cfg), "--out", str(tmp_path / "run")]) == 0
    d = [float(r["l2_Q"]) for r in _rows(tmp_path / "run" / "decay.csv")]
    assert len(d) == 5 and all(b < a for a, b in zip(d, d[1:]))


def test_solver_failure_exits_2(tmp_path, capsys):
    cfg = tmp_path / "f.toml"
    cfg.write_text("[solver]\nnewton_max_iter = 1\nretry_cap = 0\n")
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "run")]) == 2
    assert "solver failure" in capsys.readouterr().err


def test_output_root_override(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    cfg = tmp_path / "s.toml"
    cfg.write_text('output = "nested/run"\n[time]\nsteps = 2\n')
    assert main(["simulate", str(cfg)]) == 0
    assert (tmp_path / "nested" / "run" / "manifest.json").exists()
    assert resolve_run_dir("x", "y") == Path("y")


def test_number_format():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(np.float64(1 / 3)) == "0.33333333333333331"
    assert fmt(True) == "1" and fmt(np.int64(4)) == "4" and fmt("a") == "a"
