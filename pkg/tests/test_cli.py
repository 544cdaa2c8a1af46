import json
import subprocess
import sys

import pytest

from shellvk.cli import main

TINY = ["--set", "grid.n1=2", "--set", "grid.n2=2", "--set", "grid.ns=1", "--set", "grid.n2d=2",
        "--set", "grid.refine2d=[]", "--set", "time.dt=5e-3", "--set", "time.T=0.01",
        "--set", "sweep.n1=0", "--set", "sweep.n2=0", "--set", "sweep.n2d=0",
        "--set", "sweep.dt=0", "--set", "sweep.T=0"]
REST = ["--set", "forcing.profile='none'", "--set", "initial.displacement='none'",
        "--set", "initial.velocity='none'"]


def test_simulate3d_ok(tmp_path, capsys):
    assert main(["simulate3d", "--scenario", "plate-vk", "--out", str(tmp_path), "--h", "0.05"] + TINY) == 0
    assert "ok:" in capsys.readouterr().out
    assert (tmp_path / "plate-vk" / "simulate3d-h0.05" / "energy.csv").exists()


def test_config_error_exit_code(tmp_path, capsys):
    code = main(["simulate3d", "--scenario", "plate-vk", "--out", str(tmp_path), "--h", "0.3"] + TINY)
    assert code == 1 and "config error" in capsys.readouterr().err
    assert not any(tmp_path.iterdir())
    assert main(["simulate2d", "--out", str(tmp_path)]) == 1
    assert main(["sweep", "--scenario", "plate-vk", "--jobs", "0", "--out", str(tmp_path)]) == 1


def test_solver_error_exit_code(tmp_path):
    code = main(["simulate3d", "--scenario", "plate-vk", "--out", str(tmp_path), "--set",
                 "initial.velocity_amplitude=1e7", "--set", "initial.lift='kirchhoff'"] + TINY)
    assert code == 2


def test_failed_check_exit_code(tmp_path):
    # zero data gives 0/0 energy ratios, which the bounded-ratio check rejects
    args = ["sweep", "--scenario", "plate-vk", "--out", str(tmp_path)] + TINY + REST
    assert main(args) == 0
    assert main(args + ["--check"]) == 3


def test_config_file_and_env(tmp_path, monkeypatch):
    cfg = tmp_path / "exp.toml"
    cfg.write_text('name = "env-run"\n')
    monkeypatch.setenv("SHELLVK_OUT", str(tmp_path / "env"))
    assert main(["simulate2d", "--scenario", "plate-vk", "--config", str(cfg)] + TINY) == 0
    assert (tmp_path / "env" / "env-run" / "simulate2d" / "limit.csv").exists()


def test_selftest_cli(tmp_path, capsys):
    assert main(["selftest", "--seed", "3", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "suite\tstatus\tmetric" and "overall\tPASS" in out
    data = json.loads((tmp_path / "selftest.json").read_text())
    assert data["seed"] == 3 and data["passed"]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "shellvk", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "simulate3d" in res.stdout


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2
