"""
platoonsec: security analysis of CACC platoons under stealthy V2V attacks.

Per follower the toolkit synthesizes an estimator with an ISS certificate, a
chi-square style monitor on the estimation residual, and an outer ellipsoidal
bound on the states a monitor-evading attacker can reach. Distances from that
bound to the critical half-spaces give a risk verdict; Monte-Carlo simulation
checks alarm rates and containment empirically.
"""

__version__ = "0.1.0"

from .errors import (ArtifactMismatchError, ConfigError, InfeasibleGridError,
                     ModelStructureError, NonFiniteStateError, NumericalFailure,
                     ProblemDefinitionError, ProjectionError, SynthesisError, ToolkitError)
from .model import (DiscreteModel, ExtendedModel, PlatoonConfig, build_extended,
                    derive_noise_bounds, discretize, build_continuous)
from .lmi_core import ScalarGrid, SdpProblem, SdpSolution, line_search_scalar, solve
from .reach import (ClosedLoopModel, CriticalSet, Ellipsoid, HalfSpace, RiskReport,
                    assess_risk, build_closed_loop, distance_to_critical, project)
from .synth import (EstimatorDesign, MonitorDesign, ReachShape, SynthesisResult,
                    SynthesisSettings, synth_estimator, synth_monitor, synth_reach_shape,
                    synthesize_all)
from .runtime import VehicleMonitor, estimator_step, monitor_step
from .attack import AttackPolicy, NoisePolicy, gen_noise, gen_stealthy_attack
from .sim import Scenario, TrajectoryLog, empirical_reach, run_scenario
from .config import ToolkitConfig, load_config, parse_config

__all__ = [
    "__version__",
    "ToolkitError", "ConfigError", "ModelStructureError", "ProblemDefinitionError",
    "SynthesisError", "InfeasibleGridError", "ProjectionError", "NumericalFailure",
    "NonFiniteStateError", "ArtifactMismatchError",
    "PlatoonConfig", "DiscreteModel", "ExtendedModel", "build_continuous", "discretize",
    "build_extended", "derive_noise_bounds",
    "ScalarGrid", "SdpProblem", "SdpSolution", "solve", "line_search_scalar",
    "ClosedLoopModel", "CriticalSet", "Ellipsoid", "HalfSpace", "RiskReport", "assess_risk",
    "build_closed_loop", "distance_to_critical", "project",
    "EstimatorDesign", "MonitorDesign", "ReachShape", "SynthesisResult", "SynthesisSettings",
    "synth_estimator", "synth_monitor", "synth_reach_shape", "synthesize_all",
    "VehicleMonitor", "estimator_step", "monitor_step",
    "AttackPolicy", "NoisePolicy", "gen_noise", "gen_stealthy_attack",
    "Scenario", "TrajectoryLog", "empirical_reach", "run_scenario",
    "ToolkitConfig", "load_config", "parse_config",
]
