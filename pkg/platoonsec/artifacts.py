"""
On-disk formats.

    synthesis.json   platoonsec.synthesis/1   designs + design hash
    risk.json        platoonsec.risk/1        verdict and distance summary
    d_k.csv                                   distance schedule (last row k = inf)
    simulation.json  platoonsec.simulation/1  alarm statistics and containment
    residuals.csv, error_norms.csv            plot data
    trajectories.jsonl.gz                     per-record traces
    manifest.json                             RunManifest with sha256 of every artifact

Matrices are stored as row-major nested lists.
"""

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from . import __version__
from .errors import ArtifactMismatchError
from .reach import RiskReport
from .sim import TrajectoryLog
from .synth import EstimatorDesign, MonitorDesign, ReachShape, SynthesisResult

logger = logging.getLogger(__name__)

SYNTHESIS_SCHEMA = "platoonsec.synthesis/1"
RISK_SCHEMA = "platoonsec.risk/1"
SIMULATION_SCHEMA = "platoonsec.simulation/1"
MANIFEST_SCHEMA = "platoonsec.manifest/1"

PathLike = Union[str, Path]


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def write_json(path: PathLike, payload: Dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_plain(payload), f, indent=2, sort_keys=True)
    return path


def read_json(path: PathLike, schema: str) -> Dict:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except (OSError, ValueError) as exc:
        raise ArtifactMismatchError(f"cannot read {path}: {exc}") from None
    if payload.get("schema") != schema:
        raise ArtifactMismatchError(f"{path}: expected schema {schema}, "
                                    f"found {payload.get('schema')!r}")
    return payload


def synthesis_to_dict(result: SynthesisResult) -> Dict[str, Any]:
    est, mon, shape = result.estimator, result.monitor, result.reach
    c, lam, gamma = est.iss_constants()
    return {
        "schema": SYNTHESIS_SCHEMA,
        "version": __version__,
        "design_hash": result.design_hash,
        "hold": result.hold,
        "estimator": {
            "L": est.L, "P_lyap": est.P_lyap, "Y": est.Y, "mu1": est.mu1, "mu2": est.mu2,
            "alpha_decay": est.alpha_decay, "gamma": gamma, "c": c, "lambda": lam,
            "objective": est.objective, "solver": est.solver,
            "max_violation": est.max_violation,
        },
        "monitor": {
            "Pi": mon.Pi, "lambda1": mon.lambda1, "lambda2": mon.lambda2,
            "objective": mon.objective, "solver": mon.solver,
            "max_violation": mon.max_violation,
        },
        "reach": {
            "P_zeta": shape.P_zeta, "a": shape.a, "weights": list(shape.weights),
            "P_x": shape.P_x, "objective": shape.objective, "solver": shape.solver,
            "max_violation": shape.max_violation,
        },
        "meta": result.meta,
    }


def synthesis_from_dict(payload: Dict[str, Any]) -> SynthesisResult:
    try:
        e, m, r = payload["estimator"], payload["monitor"], payload["reach"]
        est = EstimatorDesign(np.array(e["L"]), np.array(e["P_lyap"]), np.array(e["Y"]),
                              e["mu1"], e["mu2"], e["alpha_decay"], e["objective"],
                              e.get("solver", ""), e.get("max_violation", 0.0))
        mon = MonitorDesign(np.array(m["Pi"]), m["lambda1"], m["lambda2"], m["objective"],
                            m.get("solver", ""), m.get("max_violation", 0.0))
        shape = ReachShape(np.array(r["P_zeta"]), r["a"], tuple(r["weights"]),
                           np.array(r["P_x"]), r["objective"], r.get("solver", ""),
                           r.get("max_violation", 0.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactMismatchError(f"malformed synthesis artifact: {exc!r}") from None
    return SynthesisResult(est, mon, shape, payload.get("hold", "decoupled"),
                           payload.get("design_hash", ""), payload.get("meta", {}))


def save_synthesis(result: SynthesisResult, path: PathLike) -> Path:
    return write_json(path, synthesis_to_dict(result))


def load_synthesis(path: PathLike, expected_hash: Optional[str] = None) -> SynthesisResult:
    """Load designs; refuse them when they were built for another configuration."""
    payload = read_json(path, SYNTHESIS_SCHEMA)
    if expected_hash is not None and payload.get("design_hash") != expected_hash:
        raise ArtifactMismatchError(
            f"{path} was synthesized for design {str(payload.get('design_hash'))[:12]}, "
            f"the configuration needs {expected_hash[:12]}")
    return synthesis_from_dict(payload)


def save_risk(report: RiskReport, json_path: PathLike, csv_path: PathLike,
              extra: Optional[Dict] = None) -> List[Path]:
    payload = {"schema": RISK_SCHEMA, "version": __version__, **report.to_dict(),
               **(extra or {})}
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    report.to_frame().to_csv(csv_path, index=False)
    return [write_json(json_path, payload), csv_path]


def save_simulation(log: TrajectoryLog, out_dir: PathLike, burn_in: int = 0,
                    extra: Optional[Dict] = None, traces: bool = True) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"schema": SIMULATION_SCHEMA, "version": __version__, "mode": log.mode,
               "seed": log.seed, "summary": log.summary.to_dict(),
               "containment": None if log.containment is None else log.containment.to_dict(),
               **(extra or {})}
    paths = [write_json(out_dir / "simulation.json", payload)]

    if log.z.shape[0]:
        scatter = out_dir / "residuals.csv"
        log.residual_scatter(burn_in=burn_in).to_csv(scatter, index=False)
        norms = out_dir / "error_norms.csv"
        log.error_norms().to_csv(norms, index=False)
        paths += [scatter, norms]
        if traces:
            jsonl = out_dir / "trajectories.jsonl.gz"
            log.to_frame().to_json(jsonl, orient="records", lines=True, compression="gzip")
            paths.append(jsonl)
    return paths


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    config_path: str
    config_hash: str
    design_hash: str
    version: str = __version__
    tolerances: Dict[str, float] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)
    stages: Dict[str, float] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)

    def add(self, *paths: PathLike, root: Optional[PathLike] = None) -> None:
        for path in paths:
            path = Path(path)
            key = str(path.relative_to(root)) if root is not None else str(path)
            self.artifacts[key] = sha256_file(path)

    def timed(self, stage: str):
        manifest = self

        class _Timer:
            def __enter__(self):
                self.start = time.perf_counter()
                return self

            def __exit__(self, *exc):
                manifest.stages[stage] = time.perf_counter() - self.start
                return False

        return _Timer()

    def save(self, path: PathLike) -> Path:
        return write_json(path, {"schema": MANIFEST_SCHEMA, **asdict(self)})


def read_frame(path: PathLike) -> pd.DataFrame:
    """Read back a CSV or gzip JSON-lines artifact."""
    path = Path(path)
    if path.suffixes[-2:] == [".jsonl", ".gz"]:
        return pd.read_json(path, orient="records", lines=True, compression="gzip")
    return pd.read_csv(path)
