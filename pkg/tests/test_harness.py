import json

import numpy as np
import pytest

from shellvk import harness
from shellvk.config import load_config
from shellvk.errors import ConfigError
from shellvk.material import MaterialModel

TINY = ["grid.n1=2", "grid.n2=2", "grid.ns=1", "grid.n2d=2", "grid.refine2d=[]",
        "time.dt=5e-3", "time.T=0.02", "sweep.n1=0", "sweep.n2=0", "sweep.n2d=0",
        "sweep.dt=0", "sweep.T=0"]
REST = ["forcing.profile='none'", "initial.displacement='none'", "initial.velocity='none'"]


def tiny(scenario="plate-vk", *extra):
    return load_config(scenario=scenario, overrides=TINY + list(extra))


def test_rest_run_writes_zero_series(tmp_path):
    art = harness.run_simulate3d(tiny("plate-vk", *REST), out=tmp_path)
    assert art.exit_code == 0
    snap = harness.read_csv(art.path("snapshots.csv"))
    assert len(snap["t"]) == 3
    for name in harness.SNAPSHOT_COLUMNS[1:-1]:
        assert np.all(snap[name] == 0), name
    # the rest configuration sits at distance O(h) from the mid-surface projection
    assert np.allclose(snap["h1_distance"], snap["h1_distance"][0]) and snap["h1_distance"][0] > 0
    energy = harness.read_csv(art.path("energy.csv"))
    assert all(np.all(energy[c] == 0) for c in ("kinetic", "elastic", "work", "slack"))


def test_forced_run_respects_energy_inequality(tmp_path):
    art = harness.run_simulate3d(tiny(), h=0.05, out=tmp_path)
    summary = json.loads(art.path("summary.json").read_text())
    assert summary["status"] == "ok" and summary["result"]["energy_inequality"]
    energy = harness.read_csv(art.path("energy.csv"))
    assert np.all(energy["slack"] <= summary["result"]["tol_energy_abs"])
    assert list(energy) == list(harness.ENERGY_COLUMNS)
    for name, rel in summary["series"].items():
        assert summary["hashes"][name] == harness._sha256(art.path(rel))
    assert harness.config_from_summary(art.path("summary.json")) == tiny()


def test_csv_precision(tmp_path):
    path = tmp_path / "x.csv"
    harness.write_csv(path, ("a", "b"), [{"a": 0.1, "b": 3}, {"a": 1 / 3, "b": True}])
    lines = path.read_text().splitlines()
    assert lines == ["a,b", "0.10000000000000001,3", "0.33333333333333331,1"]
    assert harness.read_csv(path)["a"][1] == 1 / 3


def test_h_above_h0_writes_nothing(tmp_path):
    with pytest.raises(ConfigError):
        harness.run_simulate3d(tiny(), h=0.5, out=tmp_path)
    assert not any(tmp_path.iterdir())


def test_solver_failure_recorded(tmp_path):
    cfg = tiny("plate-vk", "initial.velocity_amplitude=1e7", "initial.lift='kirchhoff'")
    art = harness.run_simulate3d(cfg, out=tmp_path)
    summary = json.loads(art.path("summary.json").read_text())
    assert art.exit_code == harness.EXIT_SOLVER == summary["exit_code"]
    assert summary["status"] == "solver-error" and summary["result"]["error"]["message"]


def test_output_precedence(tmp_path, monkeypatch):
    cfg = tiny()
    monkeypatch.setenv("SHELLVK_OUT", str(tmp_path / "env"))
    assert harness.output_root(cfg, tmp_path / "arg") == tmp_path / "arg"
    assert harness.output_root(cfg) == tmp_path / "env"
    monkeypatch.delenv("SHELLVK_OUT")
    assert str(harness.output_root(cfg)) == cfg.output.dir


def test_simulate2d_zero_data(tmp_path):
    art = harness.run_simulate2d(tiny("plate-vk", *REST), out=tmp_path)
    rows = harness.read_csv(art.path("limit.csv"))
    for c in ("norm_V", "norm_Vt", "energy", "membrane_residual"):
        assert np.all(rows[c] == 0)


def test_simulate2d_kappa_zero_conserves(tmp_path):
    cfg = load_config(scenario="plate-linear", overrides=["forcing.profile='none'", "grid.n2d=4",
                                                          "time.dt=1e-2", "time.T=0.5"])
    art = harness.run_simulate2d(cfg, out=tmp_path)
    E = harness.read_csv(art.path("limit.csv"))["energy"]
    assert art.result["kappa"] == 0.0
    assert np.abs(E - E[0]).max() <= 1e-8 * E[0]


def test_simulate2d_manufactured_table(tmp_path):
    cfg = load_config(scenario="plate-vk", overrides=[
        "forcing.profile='manufactured'", "forcing.amplitude=1.0", "forcing.omega=2.0",
        "grid.n2d=4", "grid.refine2d=[4, 8]", "time.dt=0.05", "time.T=0.5"])
    art = harness.run_simulate2d(cfg, out=tmp_path)
    table = harness.read_csv(art.path("refinement.csv"))
    assert list(table["n"]) == [4, 8] and table["error"][1] < table["error"][0]
    assert art.result["orders"][0] >= 1.9


def test_manufactured_rejected_in_3d(tmp_path):
    cfg = tiny("plate-vk", "forcing.profile='manufactured'")
    with pytest.raises(ConfigError):
        harness.run_simulate3d(cfg, out=tmp_path)


def test_zero_sweep_is_converged(tmp_path):
    report, art = harness.run_sweep(tiny("plate-vk", *REST), out=tmp_path)
    assert art.exit_code == 0
    verdicts = report.verdicts
    for q in ("V", "zeta", "strain", "Ebar", "Ehat"):
        assert verdicts[q]["sup"]["verdict"] == "converged"
    summary = json.loads(art.path("summary.json").read_text())
    assert summary["result"]["report"]["verdicts"]["V"]["sup"]["verdict"] == "converged"


def test_sweep_needs_three_thicknesses(tmp_path):
    with pytest.raises(ConfigError):
        harness.run_sweep(tiny("plate-vk", "h=[0.1, 0.05]"), out=tmp_path)


def test_sub_h4_sweep_uses_kappa_zero_limit(tmp_path):
    report, art = harness.run_sweep(tiny("plate-linear"), out=tmp_path)
    assert report.kappa == 0.0 and len(report.rows) == 3
    assert all(np.isfinite(v).all() for r in report.rows for v in r.distances.values())


def test_sweep_jobs_do_not_change_outputs(tmp_path):
    cfg = tiny()
    _, a1 = harness.run_sweep(cfg, jobs=1, out=tmp_path / "one")
    _, a2 = harness.run_sweep(cfg, jobs=3, out=tmp_path / "three")
    for name in ("report.csv", "summary.json", "energy-h0.05.csv"):
        assert a1.path(name).read_bytes() == a2.path(name).read_bytes()


def test_selftest_default_passes_and_is_deterministic():
    a, b = harness.run_selftest(7), harness.run_selftest(7)
    assert a["passed"], harness.format_selftest(a)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    assert len(a["suites"]) == len(harness.SUITES)


def test_selftest_flags_corrupted_material():
    out = harness.run_selftest(0, MaterialModel.unchecked(1.0, -1.5))
    suites = {r["suite"]: r for r in out["suites"]}
    assert not out["passed"] and not suites["l2_positive_definite"]["passed"]
    assert "FAIL" in harness.format_selftest(out)
