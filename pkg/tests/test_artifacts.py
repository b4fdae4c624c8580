"""
Artifact formats: synthesis, risk report, simulation outputs and run manifest.
"""

import dataclasses
import hashlib
import json

import numpy as np
import pytest

from platoonsec.artifacts import (RunManifest, load_synthesis, read_frame, read_json, save_risk,
                                  save_simulation, save_synthesis, sha256_file, write_json)
from platoonsec.attack import NoisePolicy
from platoonsec.errors import ArtifactMismatchError
from platoonsec.reach import CriticalSet, HalfSpace, assess_risk
from platoonsec.sim import InitialCondition, Scenario, run_scenario
from platoonsec.synth import ReachShape


@pytest.fixture
def tagged(safe_designs):
    return dataclasses.replace(safe_designs, design_hash="ab" * 32)


def test_synthesis_round_trip(tagged, tmp_path):
    path = save_synthesis(tagged, tmp_path / "synthesis.json")
    loaded = load_synthesis(path, expected_hash="ab" * 32)
    np.testing.assert_allclose(loaded.estimator.L, tagged.estimator.L)
    np.testing.assert_allclose(loaded.monitor.Pi, tagged.monitor.Pi)
    np.testing.assert_allclose(loaded.reach.P_zeta, tagged.reach.P_zeta)
    assert loaded.reach.weights == tagged.reach.weights
    assert loaded.estimator.gamma == pytest.approx(tagged.estimator.gamma)
    assert loaded.hold == "decoupled"
    assert loaded.design_hash == "ab" * 32
    payload = json.loads(path.read_text())
    assert payload["schema"] == "platoonsec.synthesis/1"
    assert payload["estimator"]["gamma"] == pytest.approx(tagged.estimator.gamma)


def test_synthesis_for_other_design_rejected(tagged, tmp_path):
    path = save_synthesis(tagged, tmp_path / "synthesis.json")
    with pytest.raises(ArtifactMismatchError) as info:
        load_synthesis(path, expected_hash="cd" * 32)
    assert info.value.exit_code == 6


def test_wrong_or_broken_artifacts_rejected(tmp_path):
    other = write_json(tmp_path / "risk.json", {"schema": "platoonsec.risk/1"})
    with pytest.raises(ArtifactMismatchError):
        load_synthesis(other)
    broken = write_json(tmp_path / "broken.json", {"schema": "platoonsec.synthesis/1"})
    with pytest.raises(ArtifactMismatchError):
        load_synthesis(broken)
    garbage = tmp_path / "garbage.json"
    garbage.write_text("{not json")
    with pytest.raises(ArtifactMismatchError):
        read_json(garbage, "platoonsec.synthesis/1")


def test_non_finite_values_are_spelled_out(tmp_path):
    path = write_json(tmp_path / "x.json", {"hi": float("inf"), "lo": -np.inf,
                                            "nan": float("nan"), "arr": np.arange(3)})
    payload = json.loads(path.read_text())
    assert payload == {"hi": "inf", "lo": "-inf", "nan": None, "arr": [0, 1, 2]}


def test_risk_artifacts(tmp_path):
    shape = ReachShape(np.eye(10), 0.5, (0.2,) * 5, np.eye(4), 0.0)
    crit = CriticalSet((HalfSpace(np.array([0.0, 1.0, 0.0, 0.0]), 0.1, "speed"),))
    report = assess_risk(shape, np.zeros(10), crit, 8)
    json_path, csv_path = save_risk(report, tmp_path / "risk.json", tmp_path / "d_k.csv",
                                    extra={"design_hash": "ff"})
    payload = read_json(json_path, "platoonsec.risk/1")
    assert payload["verdict"] == "at_risk"
    assert payload["first_violation_k"] == 2
    assert payload["design_hash"] == "ff"
    frame = read_frame(csv_path)
    assert len(frame) == 9
    assert np.isinf(frame["k"].iloc[-1])
    np.testing.assert_allclose(frame["d_k"].iloc[:-1], report.d_k)


def test_simulation_artifacts(platoon_cfg, safe_designs, tmp_path):
    s = Scenario(platoon_cfg, horizon=20, runs=2, burn_in=5,
                 noise=NoisePolicy("uniform_ball", platoon_cfg.bounds, 1),
                 init=InitialCondition(xhat="random"))
    log = run_scenario(s, safe_designs)
    paths = save_simulation(log, tmp_path / "simulation", burn_in=5, extra={"runs": 2})
    names = sorted(p.name for p in paths)
    assert names == ["error_norms.csv", "residuals.csv", "simulation.json",
                     "trajectories.jsonl.gz"]
    payload = read_json(tmp_path / "simulation" / "simulation.json", "platoonsec.simulation/1")
    assert payload["summary"]["runs"] == 2
    assert payload["containment"] is None
    traces = read_frame(tmp_path / "simulation" / "trajectories.jsonl.gz")
    assert len(traces) == 2 * 20
    np.testing.assert_allclose(traces["z"].to_numpy(), log.z.ravel(), atol=1e-9)
    scatter = read_frame(tmp_path / "simulation" / "residuals.csv")
    assert list(scatter.columns) == ["r1", "r2"]
    assert len(scatter) == 2 * 15
    assert len(read_frame(tmp_path / "simulation" / "error_norms.csv")) == 20


def test_manifest_hashes_artifacts(tmp_path):
    a = write_json(tmp_path / "a.json", {"value": 1})
    manifest = RunManifest("cfg.yaml", "c" * 64, "d" * 64, seeds={"simulation": 3})
    with manifest.timed("assess"):
        manifest.add(a, root=tmp_path)
    assert manifest.artifacts == {"a.json": hashlib.sha256(a.read_bytes()).hexdigest()}
    assert manifest.artifacts["a.json"] == sha256_file(a)
    assert manifest.stages["assess"] >= 0.0
    saved = read_json(manifest.save(tmp_path / "manifest.json"), "platoonsec.manifest/1")
    assert saved["design_hash"] == "d" * 64
    assert saved["seeds"] == {"simulation": 3}
