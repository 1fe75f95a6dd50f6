import json

import numpy as np
import pytest
import scipy.io

import fluidsolid.driver as drv
from fluidsolid.cli import main
from fluidsolid.io import CSV_HEADER, read_energy_csv
from fluidsolid.scenarios import parse_config

TINY = """
[scenario]
name = custom
circles = 1.0, 0.5, 0.3
lid_stop_step = 2
nx = 8
ny = 4
levels = 0

[run]
steps = 4
output_stride = 2
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY)
    return path


def test_run_writes_outputs(config, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(config), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 4
    assert summary["final_time"] == pytest.approx(0.08)
    assert summary["newton_iterations"] >= 4
    cols = read_energy_csv(out / "energy.csv")
    assert tuple(cols) == CSV_HEADER
    np.testing.assert_array_equal(cols["step"], np.arange(5))
    assert sorted(p.name for p in out.glob("*.vtk")) == ["state_00000.vtk", "state_00002.vtk", "state_00004.vtk"]
    # the stored config reproduces the effective settings
    params, scen, strategy, newton, run = parse_config((out / "config.ini").read_text())
    assert run.out == str(out) and scen.nx == 8
    assert json.loads(capsys.readouterr().out)["steps"] == 4


def test_command_line_overrides(config, tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--config", str(config), "--out", str(out), "--steps", "1", "--tau", "0.01",
                 "--strategy", "partitioned_direct"]) == 0
    params, _, strategy, _, run = parse_config((out / "config.ini").read_text())
    assert params.tau == 0.01 and run.steps == 1 and strategy.mode == "partitioned_direct"
    assert json.loads((out / "summary.json").read_text())["coupling_iterations"] >= 1


def test_energy_audit_passes_after_lid_stop(config, tmp_path, capsys):
    out = tmp_path / "audit"
    assert main(["energy-audit", "--config", str(config), "--out", str(out)]) == 0
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("step")]
    assert len(lines) == 2 and all("PASS" in ln for ln in lines)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["audited_steps"] == 2 and summary["failed_steps"] == []


def test_preprocess_writes_initial_field(config, tmp_path, capsys):
    out = tmp_path / "pre"
    assert main(["preprocess", "--config", str(config), "--out", str(out)]) == 0
    assert (out / "phi0.vtk").exists()
    assert "45 vertices" in capsys.readouterr().out


def test_blocks_exports_matrices(tmp_path, capsys):
    out = tmp_path / "blk"
    assert main(["blocks", "--scenario", "cavity_inclusions", "--out", str(out), "--nx", "4", "--ny", "2"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["N_CH"] + report["N_NS"] == report["N_m"]
    A = scipy.io.mmread(str(out / "A.mtx"))
    assert A.shape == (report["N_m"],) * 2
    for name in ("A_CH", "A_NS", "C_T", "C_I"):
        assert (out / f"{name}.mtx").exists()
    assert report["cond1_A_CH"] >= 1.0 and np.isfinite(report["cond1_A_CH"])


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[scenario]\nname = cavity_inclusions\n[model]\ndelta_dw = 0.5\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "x")]) == 3
    assert "line 4" in capsys.readouterr().err


def test_step_failure_exit_code(config, tmp_path):
    text = TINY + "\n[newton]\nm_N = 1\nrelTol = 1e-14\nabsTol = 1e-30\n"
    path = tmp_path / "strict.ini"
    path.write_text(text)
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "f")]) == 2


def test_energy_audit_failure_exit_code(tmp_path, monkeypatch):
    # a dissipation check that always fails must surface as exit code 1
    real = drv.check_dissipation

    def failing(*args, **kwargs):
        v = real(*args, **kwargs)
        return type(v)(**{**v.__dict__, "passed": False})

    monkeypatch.setattr(drv, "check_dissipation", failing)
    path = tmp_path / "tiny.ini"
    path.write_text(TINY)
    assert main(["energy-audit", "--config", str(path), "--out", str(tmp_path / "a")]) == 1
