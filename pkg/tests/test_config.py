"""
Scenario files: parsing, validation, hashing and command-line overrides.
"""

import pytest
import yaml

from platoonsec.config import load_config, parse_config, with_overrides
from platoonsec.errors import ConfigError

from conftest import config_dict


def test_bundled_examples_parse(example1, example2_safe, example2_risky):
    assert example1.scenario.mode == "platoon"
    assert example1.scenario.init.xhat == "random"
    assert example1.scenario.lead_input.kind == "exp_decay"
    assert example2_safe.scenario.mode == "reach"
    assert example2_safe.scenario.runs == 10000
    assert example2_risky.platoon.kp == 0.9
    assert example2_risky.platoon.kd == 0.1
    assert example2_safe.critical.labels == ["collision", "overspeed"]
    assert example2_safe.assessment.zeta1[1] == 30.0


def test_noise_bounds_follow_components(example2_safe):
    cfg = example2_safe.platoon
    assert cfg.wbar1 == pytest.approx(1234.8, abs=0.1)
    assert cfg.wbar2 == pytest.approx(1e-4)
    assert example2_safe.noise_components == (0.1, 0.01, 0.01, 0.1414)
    assert example2_safe.scenario.noise.bounds == cfg.bounds


def test_seed_reaches_noise_and_attack(example2_safe):
    s = example2_safe.scenario
    assert s.seed == 2024
    assert s.noise.seed == 2024
    assert s.attacks[0].seed == 2024
    assert s.attacks[0].kind == "random_stealthy"


def test_squared_bounds_accepted():
    data = config_dict()
    data["noise"] = {"wbar1": 1000.0, "wbar2": 1e-4, "wbar3": 0.02}
    config = parse_config(data)
    assert config.platoon.bounds == (1000.0, 1e-4, 0.02)
    assert config.noise_components is None


def test_default_critical_set():
    data = config_dict()
    del data["critical"]
    config = parse_config(data)
    assert config.critical.labels == ["collision", "overspeed"]
    assert config.critical.halfspaces[0].b == 3.0


def test_noise_can_be_switched_off():
    data = config_dict()
    data["simulation"]["noise"] = {"enabled": False}
    assert parse_config(data).scenario.noise is None


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d["platoon"].update(gain=1.0), "platoon.gain"),
    (lambda d: d.update(extra={}), "config.extra"),
    (lambda d: d["platoon"].update(h=0.0), "platoon.h"),
    (lambda d: d["platoon"].update(kp="fast"), "platoon.kp"),
    (lambda d: d["platoon"].pop("Ts"), "platoon.Ts"),
    (lambda d: d["noise"].update(wbar1=1.0), "noise"),
    (lambda d: d["noise"].pop("omega_e"), "noise.omega_e"),
    (lambda d: d["model"].update(feedforward_hold="foh"), "model.feedforward_hold"),
    (lambda d: d["assessment"].update(zeta1=[0.0, 30.0]), "assessment.zeta1"),
    (lambda d: d["synthesis"].update(workers=0), "synthesis.workers"),
    (lambda d: d["synthesis"]["alpha_grid"].update(step=0.0), "synthesis.alpha_grid.step"),
    (lambda d: d["simulation"]["attack"].update(margin=2.0), "simulation.attack.margin"),
    (lambda d: d["simulation"].update(attacks=[{"kind": "none"}]), "simulation.attacks"),
    (lambda d: d["simulation"]["init"].update(x=[0.0, 30.0]), "simulation.init.x"),
    (lambda d: d["critical"][0].update(b=-1.0), "critical[0].b"),
])
def test_invalid_values_name_their_path(mutate, field):
    data = config_dict()
    mutate(data)
    with pytest.raises(ConfigError) as info:
        parse_config(data)
    assert info.value.field == field
    assert info.value.exit_code == 2


def test_design_hash_ignores_simulation_settings():
    base = parse_config(config_dict())
    data = config_dict()
    data["simulation"]["runs"] = 5
    data["assessment"]["horizon"] = 10
    changed = parse_config(data)
    assert changed.design_hash == base.design_hash
    assert changed.config_hash != base.config_hash
    data["platoon"]["kp"] = 0.3
    assert parse_config(data).design_hash != base.design_hash


def test_overrides(example2_safe):
    config = with_overrides(example2_safe, seed=9, horizon=50, runs=3)
    assert config.scenario.seed == 9
    assert config.scenario.noise.seed == 9
    assert config.scenario.attacks[0].seed == 9
    assert config.scenario.horizon == config.assessment.horizon == 50
    assert config.scenario.runs == 3
    assert config.design_hash == example2_safe.design_hash
    assert config.config_hash != example2_safe.config_hash

    coarse = with_overrides(example2_safe, grid_step=0.1, tol_feas=1e-6)
    assert coarse.synthesis.alpha_grid.step == coarse.synthesis.a_grid.step == 0.1
    assert coarse.synthesis.feas_tol == 1e-6
    assert coarse.design_hash != example2_safe.design_hash
    assert with_overrides(example2_safe).config_hash == example2_safe.config_hash


@pytest.mark.parametrize("kwargs, flag", [
    ({"seed": -1}, "--seed"),
    ({"grid_step": 0.0}, "--grid-step"),
    ({"horizon": 0}, "--horizon"),
    ({"runs": 0}, "--runs"),
    ({"tol_opt": -1e-7}, "--tol-opt"),
])
def test_invalid_overrides(example2_safe, kwargs, flag):
    with pytest.raises(ConfigError) as info:
        with_overrides(example2_safe, **kwargs)
    assert info.value.field == flag


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("platoon: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    scalar = tmp_path / "scalar.yaml"
    scalar.write_text("42\n")
    with pytest.raises(ConfigError):
        load_config(scalar)


def test_loaded_name_and_source(tmp_path):
    data = config_dict()
    del data["name"]
    path = tmp_path / "my-scenario.yaml"
    path.write_text(yaml.safe_dump(data))
    config = load_config(path)
    assert config.name == "my-scenario"
    assert config.source == str(path)
