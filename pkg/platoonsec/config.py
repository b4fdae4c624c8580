"""
Scenario files: YAML loading, validation, overrides and hashing.

A scenario file has the sections ``name``, ``platoon``, ``noise``, ``model``,
``synthesis``, ``assessment``, ``simulation`` and optionally ``critical``.
Unknown keys are rejected; every error names the dotted path of the field.
"""

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
import yaml

from .attack import AttackPolicy, NoisePolicy
from .errors import ConfigError, ToolkitError
from .lmi_core import ScalarGrid
from .model import HOLD_MODES, PlatoonConfig, derive_noise_bounds
from .reach import DISTANCE_CONVENTIONS, CriticalSet, HalfSpace
from .sim import InitialCondition, LeadSignal, Scenario
from .synth import SynthesisSettings

logger = logging.getLogger(__name__)

SECTIONS = ("name", "platoon", "noise", "model", "synthesis", "assessment", "simulation",
            "critical")
PLATOON_KEYS = ("h", "tau", "kp", "kd", "Ts", "s_standstill", "v_max", "u_min", "u_max")
NOISE_COMPONENTS = ("omega_d", "omega_v", "omega_u", "omega_e")
NOISE_SQUARED = ("wbar1", "wbar2", "wbar3")


@dataclass(frozen=True)
class AssessmentSettings:
    horizon: int = 1000
    zeta1: Optional[Tuple[float, ...]] = None
    distance_convention: str = "printed"

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("assessment.horizon", "must be >= 1")
        if self.zeta1 is not None and len(self.zeta1) != 10:
            raise ConfigError("assessment.zeta1", "must have 10 entries ([x; e])")
        if self.distance_convention not in DISTANCE_CONVENTIONS:
            raise ConfigError("assessment.distance_convention",
                              f"must be one of {DISTANCE_CONVENTIONS}")


@dataclass(frozen=True)
class ToolkitConfig:
    name: str
    platoon: PlatoonConfig
    hold: str
    synthesis: SynthesisSettings
    assessment: AssessmentSettings
    scenario: Scenario
    critical: CriticalSet
    noise_components: Optional[Tuple[float, float, float, float]] = None
    source: str = "<mapping>"

    def canonical(self) -> Dict[str, Any]:
        """JSON-ready view of every validated value."""
        return _jsonable({
            "name": self.name,
            "platoon": dataclasses.asdict(self.platoon),
            "noise_components": self.noise_components,
            "model": {"feedforward_hold": self.hold},
            "synthesis": self._design_synthesis(),
            "synthesis_runtime": {"workers": self.synthesis.workers,
                                  "dump_dir": self.synthesis.dump_dir},
            "assessment": dataclasses.asdict(self.assessment),
            "simulation": {k: v for k, v in dataclasses.asdict(self.scenario).items()
                           if k != "cfg"},
            "critical": [{"c": hs.c, "b": hs.b, "label": hs.label}
                         for hs in self.critical.halfspaces],
        })

    def _design_synthesis(self) -> Dict[str, Any]:
        s = self.synthesis
        return {"alpha_grid": dataclasses.asdict(s.alpha_grid),
                "a_grid": dataclasses.asdict(s.a_grid),
                "estimator_criterion": s.estimator_criterion,
                "feas_tol": s.feas_tol, "opt_tol": s.opt_tol, "solver": s.solver}

    @property
    def design_hash(self) -> str:
        """Hash of everything the synthesized designs depend on."""
        return _digest({"platoon": dataclasses.asdict(self.platoon),
                        "model": {"feedforward_hold": self.hold},
                        "synthesis": self._design_synthesis()})

    @property
    def config_hash(self) -> str:
        return _digest(self.canonical())


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def _digest(obj) -> str:
    text = json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# -- section parsers -------------------------------------------------------------

def _section(data: Mapping, name: str, allowed, required=()) -> Dict:
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError(name, "must be a mapping")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}", f"unknown key (allowed: {', '.join(allowed)})")
    for key in required:
        if key not in data:
            raise ConfigError(f"{name}.{key}", "is required")
    return dict(data)


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"must be a number, got {value!r}")
    return float(value)


def _integer(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"must be an integer, got {value!r}")
    return int(value)


def _vector(value, n: int, path: str) -> Tuple[float, ...]:
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ConfigError(path, f"must be a list of {n} numbers")
    return tuple(_number(v, f"{path}[{i}]") for i, v in enumerate(value))


def _rebase(err: ConfigError, prefix: str) -> ConfigError:
    if "." in err.field:
        return err
    return ConfigError(f"{prefix}.{err.field}", err.message)


def _grid(data, path: str) -> ScalarGrid:
    d = _section(data, path, ("lo", "hi", "step"))
    try:
        return ScalarGrid(**{k: _number(v, f"{path}.{k}") for k, v in d.items()})
    except ConfigError as err:
        raise ConfigError(f"{path}.{err.field.split('.')[-1]}", err.message) from None


def _platoon(data, noise) -> Tuple[PlatoonConfig, Optional[Tuple[float, ...]]]:
    p = _section(data, "platoon", PLATOON_KEYS, required=("h", "tau", "kp", "kd", "Ts"))
    values = {k: _number(v, f"platoon.{k}") for k, v in p.items()}
    n = _section(noise, "noise", NOISE_COMPONENTS + NOISE_SQUARED)
    has_comp = any(k in n for k in NOISE_COMPONENTS)
    has_sq = any(k in n for k in NOISE_SQUARED)
    if has_comp == has_sq:
        raise ConfigError("noise", "give either the component bounds "
                          f"({', '.join(NOISE_COMPONENTS)}) or the squared bounds "
                          f"({', '.join(NOISE_SQUARED)})")
    components = None
    try:
        base = PlatoonConfig(**values)
        if has_comp:
            for key in NOISE_COMPONENTS:
                if key not in n:
                    raise ConfigError(f"noise.{key}", "is required")
            components = tuple(_number(n[k], f"noise.{k}") for k in NOISE_COMPONENTS)
            bounds = derive_noise_bounds(base.v_max, base.u_min, base.u_max, *components)
        else:
            for key in NOISE_SQUARED:
                if key not in n:
                    raise ConfigError(f"noise.{key}", "is required")
            bounds = tuple(_number(n[k], f"noise.{k}") for k in NOISE_SQUARED)
        cfg = dataclasses.replace(base, wbar1=bounds[0], wbar2=bounds[1], wbar3=bounds[2])
    except ConfigError as err:
        prefix = "noise" if err.field.startswith("wbar") else "platoon"
        raise _rebase(err, prefix) from None
    return cfg, components


def _synthesis(data) -> SynthesisSettings:
    s = _section(data, "synthesis", ("alpha_grid", "a_grid", "estimator_criterion", "feas_tol",
                                     "opt_tol", "solver", "workers", "dump_dir"))
    kwargs: Dict[str, Any] = {}
    if "alpha_grid" in s:
        kwargs["alpha_grid"] = _grid(s["alpha_grid"], "synthesis.alpha_grid")
    if "a_grid" in s:
        kwargs["a_grid"] = _grid(s["a_grid"], "synthesis.a_grid")
    for key in ("feas_tol", "opt_tol"):
        if key in s:
            value = _number(s[key], f"synthesis.{key}")
            if not value > 0:
                raise ConfigError(f"synthesis.{key}", "must be > 0")
            kwargs[key] = value
    if "workers" in s:
        kwargs["workers"] = _integer(s["workers"], "synthesis.workers")
        if kwargs["workers"] < 1:
            raise ConfigError("synthesis.workers", "must be >= 1")
    for key in ("estimator_criterion", "solver", "dump_dir"):
        if key in s and s[key] is not None:
            kwargs[key] = str(s[key])
    try:
        return SynthesisSettings(**kwargs)
    except ToolkitError as err:
        raise ConfigError("synthesis.estimator_criterion", str(err)) from None


def _assessment(data) -> AssessmentSettings:
    a = _section(data, "assessment", ("horizon", "zeta1", "distance_convention"))
    kwargs: Dict[str, Any] = {}
    if "horizon" in a:
        kwargs["horizon"] = _integer(a["horizon"], "assessment.horizon")
    if a.get("zeta1") is not None:
        kwargs["zeta1"] = _vector(a["zeta1"], 10, "assessment.zeta1")
    if "distance_convention" in a:
        kwargs["distance_convention"] = str(a["distance_convention"])
    return AssessmentSettings(**kwargs)


def _attack(data, path: str, seed: int) -> AttackPolicy:
    d = _section(data, path, ("kind", "margin", "target_direction", "knowledge", "lookahead"))
    kwargs: Dict[str, Any] = {"seed": seed}
    if "kind" in d:
        kwargs["kind"] = str(d["kind"])
    if "margin" in d:
        kwargs["margin"] = _number(d["margin"], f"{path}.margin")
    if d.get("target_direction") is not None:
        kwargs["target_direction"] = _vector(d["target_direction"], 4, f"{path}.target_direction")
    if "knowledge" in d:
        kwargs["knowledge"] = str(d["knowledge"])
    if "lookahead" in d:
        kwargs["lookahead"] = _integer(d["lookahead"], f"{path}.lookahead")
    try:
        return AttackPolicy(**kwargs)
    except ConfigError as err:
        raise ConfigError(f"{path}.{err.field.split('.')[-1]}", err.message) from None


def _lead(data) -> LeadSignal:
    path = "simulation.lead_input"
    d = _section(data, path, ("kind", "channel", "value", "amplitude", "rate", "step_k",
                              "breakpoints"))
    kwargs: Dict[str, Any] = {}
    for key in ("kind", "channel"):
        if key in d:
            kwargs[key] = str(d[key])
    for key in ("value", "amplitude", "rate"):
        if key in d:
            kwargs[key] = _number(d[key], f"{path}.{key}")
    if "step_k" in d:
        kwargs["step_k"] = _integer(d["step_k"], f"{path}.step_k")
    if "breakpoints" in d:
        kwargs["breakpoints"] = tuple(
            (_integer(bp[0], f"{path}.breakpoints[{i}]"),
             _number(bp[1], f"{path}.breakpoints[{i}]"))
            for i, bp in enumerate(d["breakpoints"]))
    return LeadSignal(**kwargs)


def _init(data) -> InitialCondition:
    path = "simulation.init"
    d = _section(data, path, ("x", "delta_v", "a_prev", "xhat", "xhat_scale"))
    kwargs: Dict[str, Any] = {}
    if "x" in d:
        kwargs["x"] = _vector(d["x"], 4, f"{path}.x")
    for key in ("delta_v", "a_prev", "xhat_scale"):
        if key in d:
            kwargs[key] = _number(d[key], f"{path}.{key}")
    if "xhat" in d:
        kwargs["xhat"] = str(d["xhat"])
    return InitialCondition(**kwargs)


def _simulation(data, cfg: PlatoonConfig, hold: str) -> Scenario:
    path = "simulation"
    d = _section(data, path, ("mode", "n_vehicles", "horizon", "runs", "batch_size", "burn_in",
                              "seed", "lead_input", "init", "noise", "attack", "attacks"))
    if "attack" in d and "attacks" in d:
        raise ConfigError("simulation.attacks", "give either attack or attacks, not both")
    kwargs: Dict[str, Any] = {"cfg": cfg, "hold": hold}
    for key in ("n_vehicles", "horizon", "runs", "batch_size", "burn_in", "seed"):
        if key in d:
            kwargs[key] = _integer(d[key], f"{path}.{key}")
    seed = kwargs.get("seed", 0)
    if "mode" in d:
        kwargs["mode"] = str(d["mode"])
    if "lead_input" in d:
        kwargs["lead_input"] = _lead(d["lead_input"])
    if "init" in d:
        kwargs["init"] = _init(d["init"])

    noise = _section(d.get("noise"), f"{path}.noise", ("kind", "enabled"))
    if noise.get("enabled", True):
        try:
            kwargs["noise"] = NoisePolicy(str(noise.get("kind", "uniform_ball")), cfg.bounds, seed)
        except ConfigError as err:
            raise ConfigError(f"{path}.noise.{err.field.split('.')[-1]}", err.message) from None

    if "attack" in d:
        kwargs["attacks"] = (_attack(d["attack"], f"{path}.attack", seed),)
    elif "attacks" in d:
        if not isinstance(d["attacks"], list) or not d["attacks"]:
            raise ConfigError("simulation.attacks", "must be a non-empty list")
        kwargs["attacks"] = tuple(_attack(a, f"{path}.attacks[{i}]", seed)
                                  for i, a in enumerate(d["attacks"]))
    return Scenario(**kwargs)


def _critical(data, cfg: PlatoonConfig) -> CriticalSet:
    if data is None:
        return CriticalSet.for_platoon(cfg)
    if not isinstance(data, list):
        raise ConfigError("critical", "must be a list of half-spaces")
    halfspaces = []
    for j, item in enumerate(data):
        d = _section(item, f"critical[{j}]", ("c", "b", "label"), required=("c", "b"))
        halfspaces.append(HalfSpace(np.array(_vector(d["c"], 4, f"critical[{j}].c")),
                                    _number(d["b"], f"critical[{j}].b"),
                                    str(d.get("label", ""))))
    return CriticalSet(tuple(halfspaces))


def parse_config(data: Mapping, source: str = "<mapping>") -> ToolkitConfig:
    top = _section(data, "config", SECTIONS, required=("platoon", "noise"))
    cfg, components = _platoon(top["platoon"], top["noise"])
    model = _section(top.get("model"), "model", ("feedforward_hold",))
    hold = str(model.get("feedforward_hold", "decoupled"))
    if hold not in HOLD_MODES:
        raise ConfigError("model.feedforward_hold", f"must be one of {HOLD_MODES}, got {hold!r}")
    return ToolkitConfig(
        name=str(top.get("name", Path(source).stem)),
        platoon=cfg,
        hold=hold,
        synthesis=_synthesis(top.get("synthesis")),
        assessment=_assessment(top.get("assessment")),
        scenario=_simulation(top.get("simulation"), cfg, hold),
        critical=_critical(top.get("critical"), cfg),
        noise_components=components,
        source=source,
    )


def load_config(path: Union[str, Path]) -> ToolkitConfig:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"{path} is not valid YAML: {exc}") from None
    if not isinstance(data, Mapping):
        raise ConfigError("config", f"{path} must contain a mapping")
    config = parse_config(data, str(path))
    logger.info("loaded %s (design %s, config %s)", path, config.design_hash[:12],
                config.config_hash[:12])
    return config


def with_overrides(config: ToolkitConfig, seed: Optional[int] = None,
                   grid_step: Optional[float] = None, horizon: Optional[int] = None,
                   runs: Optional[int] = None, tol_feas: Optional[float] = None,
                   tol_opt: Optional[float] = None) -> ToolkitConfig:
    """Command-line overrides; they take part in both hashes where relevant."""
    synthesis, assessment, scenario = config.synthesis, config.assessment, config.scenario
    if grid_step is not None:
        if not grid_step > 0:
            raise ConfigError("--grid-step", "must be > 0")
        synthesis = dataclasses.replace(
            synthesis, alpha_grid=dataclasses.replace(synthesis.alpha_grid, step=grid_step),
            a_grid=dataclasses.replace(synthesis.a_grid, step=grid_step))
    for flag, name, value in (("--tol-feas", "feas_tol", tol_feas),
                              ("--tol-opt", "opt_tol", tol_opt)):
        if value is not None:
            if not value > 0:
                raise ConfigError(flag, "must be > 0")
            synthesis = dataclasses.replace(synthesis, **{name: value})
    if horizon is not None:
        if horizon < 1:
            raise ConfigError("--horizon", "must be >= 1")
        assessment = dataclasses.replace(assessment, horizon=horizon)
        scenario = dataclasses.replace(scenario, horizon=horizon)
    if runs is not None:
        if runs < 1:
            raise ConfigError("--runs", "must be >= 1")
        scenario = dataclasses.replace(scenario, runs=runs)
    if seed is not None:
        if seed < 0:
            raise ConfigError("--seed", "must be >= 0")
        noise = scenario.noise and dataclasses.replace(scenario.noise, seed=seed)
        attacks = tuple(dataclasses.replace(a, seed=seed) for a in scenario.attacks)
        scenario = dataclasses.replace(scenario, seed=seed, noise=noise, attacks=attacks)
    return dataclasses.replace(config, synthesis=synthesis, assessment=assessment,
                               scenario=scenario)
