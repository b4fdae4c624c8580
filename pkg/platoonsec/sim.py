"""
Monte-Carlo simulation of followers, estimators and monitors.

Two plants are available:

* ``platoon``: a lead vehicle and a chain of followers, each propagated with its
  extended model and observed by its own estimator and monitor.
* ``reach``: one follower in the coordinates the reach bound speaks about,
  x via (A, B, Gamma) and the estimation error via its recursion.

Runs execute in vectorized batches. Index t of every logged array is sample
k = t + 1; residual quantities at t = 0 are zero and the injection at the last
sample is zero.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from .attack import (STREAM_INIT, AttackPolicy, NoisePolicy, StealthyAttacker, gen_noise,
                     keyed_rng)
from .errors import ConfigError, NonFiniteStateError
from .model import PlatoonConfig, lead_continuous, zoh
from .reach import alpha_schedule, schur_project
from .runtime import error_step, estimator_update, monitor_statistic
from .synth import ReachShape, SynthesisResult, build_models

logger = logging.getLogger(__name__)

MODES = ("platoon", "reach")
LEAD_KINDS = ("constant", "step", "exp_decay", "piecewise")
LEAD_CHANNELS = ("u", "epsilon0")
XHAT_INIT = ("exact", "random", "zero")
CONTAINMENT_RTOL = 1e-6
CONTAINMENT_ATOL = 1e-9
ISS_RTOL = 1e-6


@dataclass(frozen=True)
class LeadSignal:
    """
    Lead excitation sampled at Ts.

    constant: value; step: value before ``step_k``, value + amplitude after;
    exp_decay: amplitude * exp(-rate * k); piecewise: (k, value) breakpoints held.
    """

    kind: str = "constant"
    channel: str = "u"
    value: float = 0.0
    amplitude: float = 0.0
    rate: float = 0.0
    step_k: int = 0
    breakpoints: Tuple[Tuple[int, float], ...] = ()

    def __post_init__(self):
        if self.kind not in LEAD_KINDS:
            raise ConfigError("simulation.lead_input.kind",
                              f"must be one of {LEAD_KINDS}, got {self.kind!r}")
        if self.channel not in LEAD_CHANNELS:
            raise ConfigError("simulation.lead_input.channel",
                              f"must be one of {LEAD_CHANNELS}, got {self.channel!r}")
        if self.kind == "piecewise" and not self.breakpoints:
            raise ConfigError("simulation.lead_input.breakpoints", "piecewise needs breakpoints")

    def sample(self, horizon: int) -> np.ndarray:
        k = np.arange(1, horizon + 1, dtype=float)
        if self.kind == "constant":
            return np.full(horizon, self.value)
        if self.kind == "step":
            return np.where(k >= self.step_k, self.value + self.amplitude, self.value)
        if self.kind == "exp_decay":
            return self.amplitude * np.exp(-self.rate * k)
        out = np.full(horizon, float(self.breakpoints[0][1]))
        for start, level in sorted(self.breakpoints):
            out[k >= start] = level
        return out


@dataclass(frozen=True)
class InitialCondition:
    """Follower x(1), relative velocity and predecessor acceleration; lead speed v0."""

    x: Tuple[float, float, float, float] = (0.0, 20.0, 0.0, 0.0)
    delta_v: float = 0.0
    a_prev: float = 0.0
    xhat: str = "exact"
    xhat_scale: float = 1.0

    def __post_init__(self):
        if len(self.x) != 4 or not np.all(np.isfinite(self.x)):
            raise ConfigError("simulation.init.x", "must be a finite 4-vector")
        if self.xhat not in XHAT_INIT:
            raise ConfigError("simulation.init.xhat",
                              f"must be one of {XHAT_INIT}, got {self.xhat!r}")
        if self.xhat_scale < 0:
            raise ConfigError("simulation.init.xhat_scale", "must be >= 0")

    @property
    def xe(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.x, dtype=float), [self.delta_v, self.a_prev]])


@dataclass(frozen=True)
class Scenario:
    cfg: PlatoonConfig
    hold: str = "decoupled"
    mode: str = "platoon"
    n_vehicles: int = 2
    horizon: int = 1000
    lead_input: LeadSignal = LeadSignal()
    init: InitialCondition = InitialCondition()
    noise: Optional[NoisePolicy] = None
    attacks: Tuple[AttackPolicy, ...] = (AttackPolicy(),)
    runs: int = 1
    batch_size: int = 250
    burn_in: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError("simulation.mode", f"must be one of {MODES}, got {self.mode!r}")
        if self.n_vehicles < 2:
            raise ConfigError("simulation.n_vehicles", "a platoon needs at least 2 vehicles")
        for name in ("horizon", "runs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"simulation.{name}", "must be >= 1")
        if self.burn_in < 0:
            raise ConfigError("simulation.burn_in", "must be >= 0")
        if self.seed < 0:
            raise ConfigError("simulation.seed", "must be >= 0")
        v = self.init.x[1]
        if not 0.0 <= v <= self.cfg.v_max:
            raise ConfigError("simulation.init.x", f"initial velocity {v} outside [0, v_max]")
        if not 0.0 <= v + self.init.delta_v <= self.cfg.v_max:
            raise ConfigError("simulation.init.delta_v", "lead velocity outside [0, v_max]")
        if len(self.attacks) not in (1, self.followers):
            raise ConfigError("simulation.attacks",
                              f"give one policy or one per link ({self.followers})")

    @property
    def followers(self) -> int:
        return 1 if self.mode == "reach" else self.n_vehicles - 1

    def attack_for(self, vehicle: int) -> AttackPolicy:
        return self.attacks[0] if len(self.attacks) == 1 else self.attacks[vehicle]

    @property
    def attacked(self) -> bool:
        return any(p.kind != "none" for p in self.attacks)


@dataclass
class LogSummary:
    """Associative run statistics; ``merge`` is order independent."""

    runs: int = 0
    samples: int = 0
    steady_samples: int = 0
    steady_alarms: int = 0
    total_alarms: int = 0
    max_z: float = 0.0
    max_steady_z: float = 0.0
    attack_steps: int = 0
    infeasible_steps: int = 0
    iss_samples: int = 0
    iss_violations: int = 0
    max_error_norm: float = 0.0

    @property
    def alarm_rate(self) -> float:
        return self.steady_alarms / self.steady_samples if self.steady_samples else 0.0

    def merge(self, other: "LogSummary") -> "LogSummary":
        return LogSummary(
            self.runs + other.runs, self.samples + other.samples,
            self.steady_samples + other.steady_samples,
            self.steady_alarms + other.steady_alarms,
            self.total_alarms + other.total_alarms,
            max(self.max_z, other.max_z), max(self.max_steady_z, other.max_steady_z),
            self.attack_steps + other.attack_steps,
            self.infeasible_steps + other.infeasible_steps,
            self.iss_samples + other.iss_samples, self.iss_violations + other.iss_violations,
            max(self.max_error_norm, other.max_error_norm))

    def to_dict(self) -> Dict:
        out = dict(self.__dict__)
        out["alarm_rate"] = self.alarm_rate
        return out


@dataclass
class ContainmentReport:
    """Per-k containment counts of zeta' P zeta <= alpha_k and x' P_x x <= alpha_k."""

    n: np.ndarray
    zeta_inside: np.ndarray
    x_inside: np.ndarray
    max_level: float = 0.0
    max_x_level: float = 0.0
    excluded_runs: int = 0

    @classmethod
    def empty(cls, horizon: int) -> "ContainmentReport":
        z = np.zeros(horizon, dtype=np.int64)
        return cls(z, z.copy(), z.copy())

    @property
    def zeta_fraction(self) -> np.ndarray:
        return np.divide(self.zeta_inside, self.n, out=np.ones(len(self.n)), where=self.n > 0)

    @property
    def x_fraction(self) -> np.ndarray:
        return np.divide(self.x_inside, self.n, out=np.ones(len(self.n)), where=self.n > 0)

    @property
    def violations(self) -> int:
        return int((self.n - self.zeta_inside).sum())

    def merge(self, other: "ContainmentReport") -> "ContainmentReport":
        return ContainmentReport(self.n + other.n, self.zeta_inside + other.zeta_inside,
                                 self.x_inside + other.x_inside,
                                 max(self.max_level, other.max_level),
                                 max(self.max_x_level, other.max_x_level),
                                 self.excluded_runs + other.excluded_runs)

    def to_dict(self) -> Dict:
        return {
            "samples": int(self.n.sum()),
            "violations": self.violations,
            "min_zeta_fraction": float(self.zeta_fraction.min()),
            "min_x_fraction": float(self.x_fraction.min()),
            "max_level": self.max_level,
            "max_x_level": self.max_x_level,
            "excluded_runs": self.excluded_runs,
        }


@dataclass
class TrajectoryLog:
    """
    Per-run traces with shape (runs, horizon, vehicles, ...); ``xhat`` is absent
    in reach mode. Only the first ``trace_runs`` runs are kept; the summary and
    containment cover every run.
    """

    mode: str
    seed: int
    run_ids: np.ndarray
    x: np.ndarray
    e: np.ndarray
    r: np.ndarray
    z: np.ndarray
    alarm: np.ndarray
    delta: np.ndarray
    feasible: np.ndarray
    xhat: Optional[np.ndarray] = None
    summary: LogSummary = field(default_factory=LogSummary)
    containment: Optional[ContainmentReport] = None

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.z.shape

    def alarm_times(self, run: int = 0, vehicle: int = 0) -> List[int]:
        """Sample indices k (1-based) at which the monitor fired."""
        return [int(t) + 1 for t in np.flatnonzero(self.alarm[run, :, vehicle])]

    def to_frame(self) -> pd.DataFrame:
        R, H, V = self.shape
        run = np.repeat(self.run_ids, H * V)
        k = np.tile(np.repeat(np.arange(1, H + 1), V), R)
        vehicle = np.tile(np.arange(1, V + 1), R * H)
        cols = {"run": run, "k": k, "vehicle": vehicle}
        for name, arr, dim in (("x", self.x, 4), ("xhat", self.xhat, 6), ("e", self.e, 6),
                               ("r", self.r, 5)):
            if arr is None:
                continue
            flat = arr.reshape(R * H * V, dim)
            for j in range(dim):
                cols[f"{name}{j + 1}"] = flat[:, j]
        cols["z"] = self.z.ravel()
        cols["alarm"] = self.alarm.ravel()
        cols["delta"] = self.delta.ravel()
        return pd.DataFrame(cols)

    def residual_scatter(self, dims: Tuple[int, int] = (0, 1), burn_in: int = 0,
                         vehicle: int = 0) -> pd.DataFrame:
        r = self.r[:, burn_in:, vehicle, :]
        return pd.DataFrame({f"r{dims[0] + 1}": r[..., dims[0]].ravel(),
                             f"r{dims[1] + 1}": r[..., dims[1]].ravel()})

    def error_norms(self, vehicle: int = 0) -> pd.DataFrame:
        norms = np.linalg.norm(self.e[:, :, vehicle, :], axis=-1)
        return pd.DataFrame({"k": np.arange(1, norms.shape[1] + 1),
                             "mean": norms.mean(axis=0), "max": norms.max(axis=0)})


def project_monitor_ellipse(mon, dims: Sequence[int]) -> np.ndarray:
    """Shape of the monitor ellipsoid projected on residual coordinates ``dims`` (0-based)."""
    return schur_project(mon.Pi, dims)


def _noise_block(policy: Optional[NoisePolicy], n: int, steps: int, batch: int,
                 vehicle: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if policy is None:
        return np.zeros((steps, n, 3)), np.zeros((steps, n)), np.zeros((steps, n, 5))
    draws = [gen_noise(policy, k, n, batch, vehicle) for k in range(steps)]
    return (np.stack([d.omega_tilde for d in draws]), np.stack([d.omega_u for d in draws]),
            np.stack([d.omega_e for d in draws]))


def _initial_estimates(s: Scenario, xe0: np.ndarray, batch: int, vehicle: int) -> np.ndarray:
    n = xe0.shape[0]
    if s.init.xhat == "exact":
        return xe0.copy()
    if s.init.xhat == "zero":
        return np.zeros_like(xe0)
    rng = keyed_rng(s.seed, batch, STREAM_INIT, 0, vehicle)
    return xe0 + s.init.xhat_scale * rng.standard_normal((n, 6))


def _check(arr: np.ndarray, name: str, run0: int, t: int, vehicle: int) -> None:
    bad = ~np.all(np.isfinite(arr), axis=-1) if arr.ndim > 1 else ~np.isfinite(arr)
    if bad.any():
        raise NonFiniteStateError(f"non-finite {name}", run=run0 + int(np.argmax(bad)),
                                  k=t + 1, vehicle=vehicle + 1)


@dataclass
class _Batch:
    x: np.ndarray
    e: np.ndarray
    r: np.ndarray
    z: np.ndarray
    delta: np.ndarray
    feasible: np.ndarray
    xhat: Optional[np.ndarray]
    zeta1: Optional[np.ndarray] = None


def _alloc(n: int, H: int, V: int, with_xhat: bool) -> _Batch:
    return _Batch(np.zeros((n, H, V, 4)), np.zeros((n, H, V, 6)), np.zeros((n, H, V, 5)),
                  np.zeros((n, H, V)), np.zeros((n, H, V)), np.ones((n, H, V), dtype=bool),
                  np.zeros((n, H, V, 6)) if with_xhat else None)


def _attackers(s: Scenario, designs: List[SynthesisResult], em, dm) -> List[StealthyAttacker]:
    return [StealthyAttacker(s.attack_for(v), designs[v].monitor, designs[v].estimator,
                             em, dm, s.cfg.bounds) for v in range(s.followers)]


def _run_platoon_batch(s: Scenario, designs: List[SynthesisResult], n: int, batch: int,
                       run0: int) -> _Batch:
    dm, em = build_models(s.cfg, s.hold)
    V, H = s.followers, s.horizon
    out = _alloc(n, H, V, True)

    A0, B0 = lead_continuous(s.cfg)
    if s.lead_input.channel == "u":
        # command held over the sample; the lag row is replaced by the signal
        A0 = A0.copy()
        A0[3, :] = 0.0
    lead_A, lead_B = zoh(A0, B0, s.cfg.Ts)
    signal = s.lead_input.sample(H)
    v0 = s.init.x[1] + s.init.delta_v
    lead = np.tile([0.0, v0, s.init.a_prev, 0.0], (n, 1))
    if s.lead_input.channel == "u":
        lead[:, 3] = signal[0]

    xe0 = np.tile(s.init.xe, (n, 1))
    xe = [xe0.copy() for _ in range(V)]
    xhat = [_initial_estimates(s, xe0, batch, v) for v in range(V)]
    noise = [_noise_block(s.noise, n, H + 2, batch, v) for v in range(V)]
    attackers = _attackers(s, designs, em, dm)
    for v, att in enumerate(attackers):
        att.reset(xe[v] - xhat[v])

    for t in range(H):
        for v in range(V):
            out.x[:, t, v] = xe[v][:, :4]
            out.xhat[:, t, v] = xhat[v]
            out.e[:, t, v] = xe[v] - xhat[v]
        if t == H - 1:
            break
        u_prev = [lead[:, 3]] + [xe[v][:, 3] for v in range(V - 1)]
        for v in range(V):
            est, mon = designs[v].estimator, designs[v].monitor
            wt, wu, we = noise[v]
            step = attackers[v].step(t, xe[v] - xhat[v], wu[t], we[t + 1], we[t + 2],
                                     batch, v)
            net = u_prev[v] + step.delta + wu[t]
            xe_next = (xe[v] @ em.Ae.T + u_prev[v][:, None] * em.Be1[:, 0]
                       + net[:, None] * em.Be2[:, 0])
            y = xe_next @ em.Ce.T + we[t + 1]
            xhat[v], r = estimator_update(est, em, xhat[v], net, y, t + 1)
            xe[v] = xe_next
            _check(xe_next, "state", run0, t + 1, v)
            out.delta[:, t, v] = step.delta
            out.feasible[:, t, v] = step.feasible
            out.r[:, t + 1, v] = r
            out.z[:, t + 1, v] = monitor_statistic(mon, r)
        lead = lead @ lead_A.T
        if s.lead_input.channel == "u":
            lead[:, 3] = signal[t + 1]
        else:
            lead = lead + signal[t] * lead_B[:, 0]
    return out


def _run_reach_batch(s: Scenario, designs: List[SynthesisResult], n: int, batch: int,
                     run0: int) -> _Batch:
    dm, em = build_models(s.cfg, s.hold)
    H = s.horizon
    out = _alloc(n, H, 1, False)
    est, mon = designs[0].estimator, designs[0].monitor
    M = em.CeAe

    xe0 = np.tile(s.init.xe, (n, 1))
    x = xe0[:, :4].copy()
    e = xe0 - _initial_estimates(s, xe0, batch, 0)
    out.zeta1 = np.hstack([x, e])
    wt, wu, we = _noise_block(s.noise, n, H + 2, batch, 0)
    attacker = _attackers(s, designs, em, dm)[0]
    attacker.reset(e)

    for t in range(H):
        out.x[:, t, 0] = x
        out.e[:, t, 0] = e
        if t == H - 1:
            break
        step = attacker.step(t, e, wu[t], we[t + 1], we[t + 2], batch, 0)
        r = e @ M.T + we[t + 1]
        x = x @ dm.A.T + wt[t] @ dm.B.T + step.delta[:, None] * dm.G[:, 0]
        e = error_step(est, em, e, step.delta, wu[t], we[t + 1])
        _check(x, "state", run0, t + 1, 0)
        out.delta[:, t, 0] = step.delta
        out.feasible[:, t, 0] = step.feasible
        out.r[:, t + 1, 0] = r
        out.z[:, t + 1, 0] = monitor_statistic(mon, r)
    return out


def _summarize(s: Scenario, designs: List[SynthesisResult], b: _Batch) -> LogSummary:
    n, H, V = b.z.shape
    alarm = b.z > 1.0
    steady = alarm[:, s.burn_in:, :]
    attacked = np.array([s.attack_for(v).kind != "none" for v in range(V)])
    attack_steps = b.feasible[:, :H - 1, attacked]
    err = np.linalg.norm(b.e, axis=-1)

    iss_samples = iss_violations = 0
    if s.noise is not None:
        _, r2, r3 = s.noise.radii
        w_sup = r2 + r3
    else:
        w_sup = 0.0
    for v in range(V):
        if attacked[v]:
            continue
        c, lam, gamma = designs[v].estimator.iss_constants()
        bound = c * lam ** np.arange(H) * err[:, :1, v] + gamma * w_sup
        iss_samples += bound.size
        iss_violations += int((err[:, :, v] > bound * (1 + ISS_RTOL) + 1e-9).sum())

    return LogSummary(
        runs=n, samples=b.z.size, steady_samples=steady.size,
        steady_alarms=int(steady.sum()), total_alarms=int(alarm.sum()),
        max_z=float(b.z.max()), max_steady_z=float(b.z[:, s.burn_in:].max(initial=0.0)),
        attack_steps=int(attack_steps.size), infeasible_steps=int((~attack_steps).sum()),
        iss_samples=iss_samples, iss_violations=iss_violations,
        max_error_norm=float(err.max()))


def _containment(zeta1: np.ndarray, x: np.ndarray, e: np.ndarray, z: np.ndarray,
                 feasible: np.ndarray, shape: ReachShape) -> ContainmentReport:
    n, H = x.shape[:2]
    zeta = np.concatenate([x, e], axis=-1)
    # runs whose residual ever left the monitor set or had a flagged step are not admissible
    admissible = (z[:, 2:] <= 1.0).all(axis=1) & feasible[:, :H - 1].all(axis=1)
    zeta, x, zeta1 = zeta[admissible], x[admissible], zeta1[admissible]
    alpha = np.stack([alpha_schedule(shape, z1, H) for z1 in zeta1]) if len(zeta1) else \
        np.ones((0, H))
    lz = np.einsum("nki,ij,nkj->nk", zeta, shape.P_zeta, zeta)
    lx = np.einsum("nki,ij,nkj->nk", x, shape.P_x, x)
    limit = alpha * (1 + CONTAINMENT_RTOL) + CONTAINMENT_ATOL
    scale = np.maximum(alpha, CONTAINMENT_ATOL)
    return ContainmentReport(
        np.full(H, zeta.shape[0], dtype=np.int64),
        (lz <= limit).sum(axis=0).astype(np.int64), (lx <= limit).sum(axis=0).astype(np.int64),
        float((lz / scale).max(initial=0.0)), float((lx / scale).max(initial=0.0)),
        int((~admissible).sum()))


def empirical_reach(log: TrajectoryLog, shape: ReachShape) -> ContainmentReport:
    """Containment of the logged reach-mode trajectories in the ellipsoid schedule."""
    if log.mode != "reach":
        raise ConfigError("simulation.mode", "containment is defined for reach-mode logs")
    zeta1 = np.concatenate([log.x[:, 0, 0], log.e[:, 0, 0]], axis=-1)
    return _containment(zeta1, log.x[:, :, 0], log.e[:, :, 0], log.z[:, :, 0],
                        log.feasible[:, :, 0], shape)


def run_scenario(s: Scenario, designs: Union[SynthesisResult, Sequence[SynthesisResult]],
                 trace_runs: Optional[int] = None, shape: Optional[ReachShape] = None,
                 progress: bool = False) -> TrajectoryLog:
    """
    Simulate ``s.runs`` runs in batches of ``s.batch_size``.

    ``trace_runs`` limits how many runs keep full traces (default: all). With a
    reach shape, containment is accumulated over every run in reach mode.
    """
    if isinstance(designs, SynthesisResult):
        designs = [designs] * s.followers
    designs = list(designs)
    if len(designs) != s.followers:
        raise ConfigError("simulation.n_vehicles",
                          f"{len(designs)} designs for {s.followers} followers")
    trace_runs = s.runs if trace_runs is None else min(trace_runs, s.runs)
    runner = _run_platoon_batch if s.mode == "platoon" else _run_reach_batch

    summary = LogSummary()
    containment = ContainmentReport.empty(s.horizon) if shape is not None else None
    kept: List[_Batch] = []
    n_batches = -(-s.runs // s.batch_size)
    for batch in tqdm(range(n_batches), desc=f"simulate[{s.mode}]", disable=not progress,
                      leave=False):
        run0 = batch * s.batch_size
        n = min(s.batch_size, s.runs - run0)
        b = runner(s, designs, n, batch, run0)
        summary = summary.merge(_summarize(s, designs, b))
        if containment is not None and s.mode == "reach":
            containment = containment.merge(_containment(
                b.zeta1, b.x[:, :, 0], b.e[:, :, 0], b.z[:, :, 0], b.feasible[:, :, 0], shape))
        if run0 < trace_runs or batch == 0:
            keep = max(0, min(n, trace_runs - run0))
            kept.append(_Batch(*(None if a is None else a[:keep] for a in
                                 (b.x, b.e, b.r, b.z, b.delta, b.feasible, b.xhat))))
        logger.debug("batch %d: %d runs, alarms=%d", batch, n, summary.total_alarms)

    def cat(name):
        arrays = [getattr(b, name) for b in kept]
        return None if arrays[0] is None else np.concatenate(arrays)

    log = TrajectoryLog(s.mode, s.seed, np.arange(trace_runs), cat("x"), cat("e"), cat("r"),
                        cat("z"), cat("z") > 1.0, cat("delta"), cat("feasible"), cat("xhat"),
                        summary, containment)
    logger.info("simulated %d runs (%s): steady alarm rate %.4f%%, max z %.3f, "
                "infeasible attack steps %d", summary.runs, s.mode, 100 * summary.alarm_rate,
                summary.max_z, summary.infeasible_steps)
    if containment is not None:
        logger.info("containment: %d violations, max level %.3f", containment.violations,
                    containment.max_level)
    return log
