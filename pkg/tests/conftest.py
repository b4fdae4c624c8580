"""Shared fixtures: bundled scenarios, their models and coarse-grid designs."""

from pathlib import Path

import numpy as np
import pytest
import yaml

from platoonsec.config import load_config
from platoonsec.lmi_core import ScalarGrid
from platoonsec.synth import (EstimatorDesign, MonitorDesign, SynthesisSettings, build_models,
                              synthesize_all)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

# ten grid points per sweep keeps the default suite fast
COARSE = SynthesisSettings(alpha_grid=ScalarGrid(0.05, 0.95, 0.1),
                           a_grid=ScalarGrid(0.05, 0.95, 0.1))


def config_dict(name: str = "example2-safe") -> dict:
    with open(CONFIG_DIR / f"{name}.yaml", "r", encoding="utf-8") as f:
        return yaml.safe_load(f)


def hand_estimator(gain: float = 0.4) -> EstimatorDesign:
    """Estimator with a hand-picked gain; enough for identities that hold for any L."""
    L = gain * np.vstack([np.eye(5), np.zeros((1, 5))])
    return EstimatorDesign(L, np.eye(6), L.copy(), 1.0, 1.0, 0.5, 2.0)


def hand_monitor(scale: float = 10.0) -> MonitorDesign:
    return MonitorDesign(scale * np.eye(5), 1.0, 1.0, 0.0)


@pytest.fixture(scope="session")
def example1():
    return load_config(CONFIG_DIR / "example1.yaml")


@pytest.fixture(scope="session")
def example2_safe():
    return load_config(CONFIG_DIR / "example2-safe.yaml")


@pytest.fixture(scope="session")
def example2_risky():
    return load_config(CONFIG_DIR / "example2-risky.yaml")


@pytest.fixture(scope="session")
def platoon_cfg(example2_safe):
    return example2_safe.platoon


@pytest.fixture(scope="session")
def models(platoon_cfg):
    """(DiscreteModel, ExtendedModel) of the nominal gains."""
    return build_models(platoon_cfg)


@pytest.fixture(scope="session")
def safe_designs(platoon_cfg):
    return synthesize_all(platoon_cfg, "decoupled", COARSE)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
