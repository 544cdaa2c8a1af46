import pytest
from hypothesis import given, settings, strategies as st

from shellvk.config import (SCENARIOS, ExperimentConfig, from_dict, load_config, parse_override,
                            validate)
from shellvk.errors import ConfigError


@pytest.mark.parametrize("name", SCENARIOS)
def test_scenarios_load_and_round_trip(name):
    cfg = load_config(scenario=name)
    assert cfg.name == name
    assert from_dict(cfg.to_dict()) == cfg


def test_scenario_kappa_regimes():
    assert load_config(scenario="plate-vk").scaling.rule == "kappa_h4"
    lin = load_config(scenario="plate-linear").scaling
    assert lin.rule == "sub_h4" and lin.beta > 4


def test_sweep_overrides_fold_into_base():
    cfg = load_config(scenario="plate-vk")
    s = cfg.for_sweep()
    assert (s.grid.n1, s.grid.n2d, s.time.dt, s.time.T) == (16, 16, 2e-3, 0.1)
    assert s.grid.ns == cfg.grid.ns
    plain = load_config(scenario="cylinder-vk")
    assert plain.for_sweep() == plain


def test_overrides_and_files(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text('name = "mine"\n[time]\nT = 0.05\n')
    cfg = load_config(path, "plate-vk", ["grid.n1=4", "forcing.profile=none", "h=[0.1, 0.05]"])
    assert cfg.name == "mine" and cfg.time.T == 0.05 and cfg.grid.n1 == 4
    assert cfg.forcing.profile == "none" and cfg.h == (0.1, 0.05)
    assert cfg.grid.n2 == 8


def test_parse_override():
    assert parse_override("a.b=3") == {"a": {"b": 3}}
    assert parse_override("x = word") == {"x": "word"}
    for bad in ("novalue", "=3", "a..b=1"):
        with pytest.raises(ConfigError):
            parse_override(bad)


@pytest.mark.parametrize("override", [
    "h=[0.2, 0.1]", "h=[0.05, 0.1]", "h=[]", "h=[0.1, -0.05]", "time.T=0", "time.dt=1.0",
    "time.samples=1", "time.scheme='rk4'", "tolerances.tol_B=0", "tolerances.newton_maxit=0",
    "grid.n1=0", "initial.mode='other'", "initial.lift='other'", "forcing.direction='up'",
    "forcing.temporal='square'", "scaling.kappa=0", "material.mu=-1", "initial.velocity='wave'",
    "forcing.profile='wave'", "chart.kind='torus'", "grid.n1=2.5", "unknown=1", "grid.extra=1",
    "time.T='soon'",
])
def test_invalid_configs(override):
    with pytest.raises(ConfigError):
        load_config(scenario="plate-vk", overrides=[override])


def test_manufactured_needs_plate():
    with pytest.raises(ConfigError):
        load_config(scenario="sphere-vk", overrides=["forcing.profile='manufactured'"])


def test_missing_file_and_bad_toml(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("h = [")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(scenario="torus")


def test_defaults_validate():
    assert validate(ExperimentConfig()) == ExperimentConfig()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(1e-3, 0.1), min_size=1, max_size=4, unique=True),
       st.integers(1, 32), st.floats(1e-4, 1e-2))
def test_round_trip_property(hs, n, dt):
    hs = sorted(hs, reverse=True)
    cfg = load_config(scenario="plate-vk", overrides=[f"h={hs!r}", f"grid.n1={n}", f"time.dt={dt!r}"])
    assert from_dict(cfg.to_dict()) == cfg
