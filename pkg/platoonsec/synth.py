"""
Offline synthesis: estimator gain, residual monitor and reachable-set shape.

Each stage is a family of semidefinite programs indexed by one scalar (the
dissipation rate alpha for the estimator, the contraction a for the reach set);
the scalar is swept over a grid and the best feasible program wins.

    estimator  ->  L, gamma          (robust ISS observer)
    monitor    ->  Pi                (ellipsoidal residual detector)
    reach      ->  P_zeta, a, P_x    (outer ellipsoid of the stealthy reach set)
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.linalg import eigh

from .errors import SynthesisError
from .lmi_core import (DEFAULT_FEAS_TOL, DEFAULT_OPT_TOL, BlockLMI, LinearInequality, Objective,
                       ScalarGrid, SdpProblem, SdpSolution, Sense, Variable, line_search_scalar,
                       solve, to_sdpa)
from .model import (DiscreteModel, ExtendedModel, PlatoonConfig, build_continuous,
                    build_extended, discretize)
from .reach import ClosedLoopModel, build_closed_loop, schur_project

logger = logging.getLogger(__name__)

ESTIMATOR_CRITERIA = ("gamma", "objective")
# Input dimensions of w_tilde, w_u, w_e(k+1), w_e(k+2), r(k+2).
SOURCE_DIMS = (3, 1, 5, 5, 5)
# Horizon of the input-to-state sum that sets the reach-program coordinate scaling.
SCALING_STEPS = 200


@dataclass(frozen=True)
class SynthesisSettings:
    alpha_grid: ScalarGrid = ScalarGrid()
    a_grid: ScalarGrid = ScalarGrid()
    estimator_criterion: str = "gamma"
    feas_tol: float = DEFAULT_FEAS_TOL
    opt_tol: float = DEFAULT_OPT_TOL
    solver: Optional[str] = None
    workers: int = 1
    progress: bool = False
    dump_dir: Optional[str] = None

    def __post_init__(self):
        if self.estimator_criterion not in ESTIMATOR_CRITERIA:
            raise SynthesisError(
                f"estimator criterion must be one of {ESTIMATOR_CRITERIA}, "
                f"got {self.estimator_criterion!r}")


@dataclass(frozen=True)
class EstimatorDesign:
    """
    Robust estimator x_hat+ = Ae x_hat + Be u + L (y - Ce (Ae x_hat + Be u)).

    V(e) = e' P_lyap e decays at rate alpha up to mu1 * |w|^2 and dominates |e|^2 / mu2.
    """

    L: np.ndarray
    P_lyap: np.ndarray
    Y: np.ndarray
    mu1: float
    mu2: float
    alpha_decay: float
    objective: float
    solver: str = ""
    max_violation: float = 0.0

    @property
    def gamma(self) -> float:
        return math.sqrt(self.mu1 * self.mu2)

    def error_matrix(self, em: ExtendedModel) -> np.ndarray:
        """(I - L Ce) Ae."""
        return (np.eye(em.Ae.shape[0]) - self.L @ em.Ce) @ em.Ae

    def spectral_radius(self, em: ExtendedModel) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.error_matrix(em)))))

    def iss_constants(self) -> Tuple[float, float, float]:
        """(c, lam, gamma) with |e(k)| <= c lam^k |e(0)| + gamma sup|w|."""
        c = math.sqrt(self.mu2 * float(np.linalg.eigvalsh(self.P_lyap)[-1]))
        return c, math.sqrt(1.0 - self.alpha_decay), self.gamma

    def error_bound(self, k: int, e0_norm: float, w_sup: float) -> float:
        c, lam, gamma = self.iss_constants()
        return c * lam ** k * e0_norm + gamma * w_sup

    def next_error(self, em: ExtendedModel, e: np.ndarray, w_u: float,
                   w_e: np.ndarray) -> np.ndarray:
        Lbar = np.eye(em.Ae.shape[0]) - self.L @ em.Ce
        return self.error_matrix(em) @ e - (Lbar @ em.Be1).ravel() * w_u - self.L @ w_e

    def dissipation_gap(self, em: ExtendedModel, e: np.ndarray, w_u: float,
                        w_e: np.ndarray) -> float:
        """V(e+) - (1 - alpha) V(e) - alpha mu1 |w|^2; non-positive for a valid design."""
        e_next = self.next_error(em, e, w_u, w_e)
        w2 = w_u ** 2 + float(np.dot(w_e, w_e))
        P, alpha = self.P_lyap, self.alpha_decay
        return (float(e_next @ P @ e_next) - (1.0 - alpha) * float(e @ P @ e)
                - alpha * self.mu1 * w2)


@dataclass(frozen=True)
class MonitorDesign:
    """Residual detector z = r' Pi r with alarm threshold 1."""

    Pi: np.ndarray
    lambda1: float
    lambda2: float
    objective: float
    solver: str = ""
    max_violation: float = 0.0

    def certificate_slack(self, gamma: float, wbar2: float, wbar3: float) -> float:
        """1 - lambda1 gamma^2 (wbar2 + wbar3) - lambda2 wbar3."""
        return 1.0 - self.lambda1 * gamma ** 2 * (wbar2 + wbar3) - self.lambda2 * wbar3


@dataclass(frozen=True)
class ReachShape:
    """Outer ellipsoid shape of the stealthy reachable set of zeta = [x; e]."""

    P_zeta: np.ndarray
    a: float
    weights: Tuple[float, ...]
    P_x: np.ndarray
    objective: float
    solver: str = ""
    max_violation: float = 0.0

    @property
    def blocks(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(P1, P2, P3) partition of P_zeta along x (4) and e (6)."""
        P = self.P_zeta
        return P[:4, :4], P[:4, 4:], P[4:, 4:]


@dataclass
class SynthesisResult:
    estimator: EstimatorDesign
    monitor: MonitorDesign
    reach: ReachShape
    hold: str = "decoupled"
    design_hash: str = ""
    meta: Dict = field(default_factory=dict)


# -- program builders ----------------------------------------------------------

def estimator_problem(em: ExtendedModel, alpha: float) -> SdpProblem:
    """
    Fixed-alpha program for (P, Y, mu1, mu2), minimizing mu1 + mu2.

    The first LMI is the dissipation inequality in the variables z = [e+; e; w_u; w_e];
    the second bounds P from below by I / mu2.
    """
    if not 0.0 < alpha < 1.0:
        raise SynthesisError(f"alpha must lie in (0, 1), got {alpha}")
    n, m = em.Ae.shape[0], em.Ce.shape[0]
    P = Variable.psd("P", n)
    Y = Variable.full("Y", n, m)
    mu1 = Variable.positive("mu1")
    mu2 = Variable.positive("mu2")

    PLbar = P.expr - Y.expr @ em.Ce
    dissipation = BlockLMI("estimator_dissipation", [
        [-P.expr],
        [(PLbar @ em.Ae).T, P.expr * (alpha - 1.0)],
        [-(PLbar @ em.Be1).T, None, mu1.expr * np.eye(1) * -alpha],
        [-Y.expr.T, None, None, mu1.expr * np.eye(m) * -alpha],
    ], sense=Sense.NSD)
    coupling = BlockLMI("estimator_gain_bound", [
        [P.expr],
        [np.eye(n), mu2.expr * np.eye(n)],
    ], sense=Sense.PSD)
    return SdpProblem(f"estimator[alpha={alpha:g}]", [P, Y, mu1, mu2],
                      [dissipation, coupling], Objective.minimize(mu1=1.0, mu2=1.0))


def monitor_problem(em: ExtendedModel, gamma: float, wbar2: float, wbar3: float) -> SdpProblem:
    """Largest-volume residual ellipsoid {r' Pi r <= 1} certified by the S-procedure."""
    m, n = em.Ce.shape
    M = em.CeAe
    Pi = Variable.psd("Pi", m)
    l1 = Variable.positive("lambda1")
    l2 = Variable.positive("lambda2")
    slack = (np.eye(1) - l1.expr * np.eye(1) * (gamma ** 2 * (wbar2 + wbar3))
             - l2.expr * np.eye(1) * wbar3)
    lmi = BlockLMI("monitor_containment", [
        [l1.expr * np.eye(n) - M.T @ Pi.expr @ M],
        [Pi.expr @ M, l2.expr * np.eye(m) - Pi.expr],
        [None, None, slack],
    ], sense=Sense.PSD)
    return SdpProblem(f"monitor[gamma={gamma:.4g}]", [Pi, l1, l2], [lmi],
                      Objective.neg_logdet("Pi"))


def _inv_sqrt(W: np.ndarray) -> np.ndarray:
    w, V = eigh(0.5 * (W + W.T))
    if w[0] <= 0:
        raise SynthesisError("input weight must be positive definite")
    return (V / np.sqrt(w)) @ V.T


def source_weights(Pi: np.ndarray, bounds: Tuple[float, float, float]) -> Tuple[np.ndarray, ...]:
    """Quadratic weights W_i with w_i' W_i w_i <= 1 for the five reach-set inputs."""
    wbar1, wbar2, wbar3 = bounds
    return (np.eye(3) / wbar1, np.eye(1) / wbar2, np.eye(5) / wbar3, np.eye(5) / wbar3,
            np.asarray(Pi, dtype=float))


def input_weights(Pi: np.ndarray, bounds: Tuple[float, float, float],
                  weights: Tuple[float, ...]) -> np.ndarray:
    """Block-diagonal diag((1 - a_i) W_i) for fixed multipliers a_i."""
    W = np.zeros((sum(SOURCE_DIMS), sum(SOURCE_DIMS)))
    offset = 0
    for a_i, W_i in zip(weights, source_weights(Pi, bounds)):
        d = W_i.shape[0]
        W[offset:offset + d, offset:offset + d] = (1.0 - a_i) * W_i
        offset += d
    return W


def normalized_inputs(closed: ClosedLoopModel, Pi: np.ndarray,
                      bounds: Tuple[float, float, float]) -> np.ndarray:
    """[B_i W_i^-1/2]: every input then lives in the unit ball."""
    return np.hstack([B_i @ _inv_sqrt(W_i)
                      for B_i, W_i in zip(closed.inputs, source_weights(Pi, bounds))])


def reach_scaling(closed: ClosedLoopModel, Pi: np.ndarray,
                  bounds: Tuple[float, float, float], steps: int = SCALING_STEPS) -> np.ndarray:
    """
    Per-coordinate envelope s of zeta driven by unit-ball inputs.

    s_i = sqrt(diag(sum_k Acal^k Bt Bt' Acal'^k)_i). Spacing and velocity move in
    tens of metres while estimation errors stay near the noise level, so the
    reach program is posed in zeta / s where every coordinate is of order one.
    """
    G = normalized_inputs(closed, Pi, bounds)
    X = np.zeros_like(closed.Acal)
    for _ in range(steps):
        X += G @ G.T
        G = closed.Acal @ G
    s = np.sqrt(np.diag(X))
    if not np.all(np.isfinite(s)) or s.min() <= 0.0:
        raise SynthesisError("reach inputs leave some coordinate of zeta unexcited",
                             diagnostics={"envelope": s.tolist()})
    return s


def reach_problem(closed: ClosedLoopModel, Pi: np.ndarray,
                  bounds: Tuple[float, float, float], a: float,
                  scaling: Optional[np.ndarray] = None) -> SdpProblem:
    """
    Fixed-a program for the reach-set shape P and multipliers a_1..a_5.

    Inputs are normalized so each weight block reads (1 - a_i) I, keeping the
    program well scaled when wbar1 and wbar2 differ by many orders of magnitude.
    With ``scaling`` s the program is posed in zeta / s: its variable P is then
    S P_zeta S for S = diag(s).
    """
    if not 0.0 < a < 1.0:
        raise SynthesisError(f"a must lie in (0, 1), got {a}")
    n = closed.Acal.shape[0]
    s = np.ones(n) if scaling is None else np.asarray(scaling, dtype=float)
    Acal = closed.Acal * s[None, :] / s[:, None]
    Bt = normalized_inputs(closed, Pi, bounds) / s[:, None]
    P = Variable.psd("P", n)
    mults = [Variable.unit(f"a{i + 1}") for i in range(len(SOURCE_DIMS))]

    total = sum(SOURCE_DIMS)
    W = np.eye(total)
    offset = 0
    for var, d in zip(mults, SOURCE_DIMS):
        D = np.zeros((total, total))
        D[offset:offset + d, offset:offset + d] = np.eye(d)
        W = W - var.expr * D
        offset += d

    lmi = BlockLMI("reach_invariance", [
        [P.expr * a],
        [P.expr @ Acal, P.expr],
        [None, Bt.T @ P.expr, W],
    ], sense=Sense.PSD)
    budget = LinearInequality("multiplier_budget", sum(var.expr for var in mults), lower=a)
    return SdpProblem(f"reach[a={a:g}]", [P] + mults, [lmi], Objective.neg_logdet("P"),
                      [budget])


# -- synthesis stages ------------------------------------------------------------

def _dump(problem: SdpProblem, settings: SynthesisSettings) -> None:
    if settings.dump_dir:
        path = Path(settings.dump_dir) / f"{problem.name.split('[')[0]}.dat-s"
        to_sdpa(problem, path)
        logger.info("wrote %s", path)


def synth_estimator(em: ExtendedModel,
                    settings: SynthesisSettings = SynthesisSettings()) -> EstimatorDesign:
    """Sweep alpha; keep the design with the smallest gamma (or objective)."""

    def program(alpha: float) -> SdpSolution:
        return solve(estimator_problem(em, alpha), settings.feas_tol, settings.opt_tol,
                     settings.solver)

    if settings.estimator_criterion == "gamma":
        key = lambda sol: math.sqrt(float(sol["mu1"]) * float(sol["mu2"]))
    else:
        key = None
    alpha, sol = line_search_scalar(program, settings.alpha_grid, key, settings.workers,
                                    settings.progress, name="estimator")
    P = np.asarray(sol["P"])
    Y = np.asarray(sol["Y"])
    L = np.linalg.solve(P, Y)
    design = EstimatorDesign(L, P, Y, float(sol["mu1"]), float(sol["mu2"]), alpha,
                             sol.objective_value, sol.solver, sol.max_violation)
    rho = design.spectral_radius(em)
    if not rho < 1.0:
        raise SynthesisError(f"estimator error dynamics not Schur (spectral radius {rho:.6f})",
                             diagnostics={"alpha": alpha, "spectral_radius": rho})
    c, lam, gamma = design.iss_constants()
    logger.info("estimator: alpha=%.3f gamma=%.4g c=%.4g lambda=%.4f rho=%.4f",
                alpha, gamma, c, lam, rho)
    _dump(estimator_problem(em, alpha), settings)
    return design


def synth_monitor(em: ExtendedModel, est: EstimatorDesign, wbar2: float, wbar3: float,
                  settings: SynthesisSettings = SynthesisSettings()) -> MonitorDesign:
    if wbar2 <= 0 or wbar3 <= 0:
        raise SynthesisError(
            f"monitor synthesis needs positive noise bounds (wbar2={wbar2}, wbar3={wbar3}); "
            "with no noise the residual set degenerates to a point",
            diagnostics={"wbar2": wbar2, "wbar3": wbar3})
    gamma = est.gamma
    if not math.isfinite(gamma):
        raise SynthesisError(f"estimator gain bound is not finite ({gamma})")
    problem = monitor_problem(em, gamma, wbar2, wbar3)
    sol = solve(problem, settings.feas_tol, settings.opt_tol, settings.solver)
    if not sol.ok:
        raise SynthesisError(f"monitor program returned {sol.status.value}",
                             diagnostics={"gamma": gamma, "violation": sol.max_violation})
    design = MonitorDesign(np.asarray(sol["Pi"]), float(sol["lambda1"]), float(sol["lambda2"]),
                           sol.objective_value, sol.solver, sol.max_violation)
    slack = design.certificate_slack(gamma, wbar2, wbar3)
    if slack < -settings.feas_tol:
        raise SynthesisError(f"monitor certificate slack is negative ({slack:.3e})")
    logger.info("monitor: -logdet Pi=%.4f lambda1=%.4g lambda2=%.4g slack=%.3e",
                design.objective, design.lambda1, design.lambda2, slack)
    _dump(problem, settings)
    return design


def synth_reach_shape(closed: ClosedLoopModel, mon: MonitorDesign,
                      bounds: Tuple[float, float, float],
                      settings: SynthesisSettings = SynthesisSettings()) -> ReachShape:
    """Sweep a; keep the smallest-volume ellipsoid and project it on x."""
    s = reach_scaling(closed, mon.Pi, bounds)

    def program(a: float) -> SdpSolution:
        return solve(reach_problem(closed, mon.Pi, bounds, a, s), settings.feas_tol,
                     settings.opt_tol, settings.solver)

    a, sol = line_search_scalar(program, settings.a_grid, None, settings.workers,
                                settings.progress, name="reach")
    P = np.asarray(sol["P"]) / np.outer(s, s)
    P = 0.5 * (P + P.T)
    # -logdet in zeta coordinates
    objective = sol.objective_value + 2.0 * float(np.sum(np.log(s)))
    weights = tuple(float(sol[f"a{i + 1}"]) for i in range(len(SOURCE_DIMS)))
    shape = ReachShape(P, a, weights, schur_project(P, range(4)), objective,
                       sol.solver, sol.max_violation)
    logger.info("reach: a=%.3f -logdet P=%.4f multipliers=%s", a, shape.objective,
                ", ".join(f"{w:.3f}" for w in weights))
    _dump(reach_problem(closed, mon.Pi, bounds, a, s), settings)
    return shape


def build_models(cfg: PlatoonConfig,
                 hold: str = "decoupled") -> Tuple[DiscreteModel, ExtendedModel]:
    return discretize(build_continuous(cfg), cfg.Ts), build_extended(cfg, hold)


def synthesize_all(cfg: PlatoonConfig, hold: str = "decoupled",
                   settings: SynthesisSettings = SynthesisSettings(),
                   design_hash: str = "") -> SynthesisResult:
    """Estimator, monitor and reach shape for one parameter set."""
    dm, em = build_models(cfg, hold)
    est = synth_estimator(em, settings)
    mon = synth_monitor(em, est, cfg.wbar2, cfg.wbar3, settings)
    closed = build_closed_loop(dm, em, est)
    shape = synth_reach_shape(closed, mon, cfg.bounds, settings)
    return SynthesisResult(est, mon, shape, hold, design_hash, meta={
        "spectral_radius": est.spectral_radius(em),
        "iss_constants": list(est.iss_constants()),
        "monitor_slack": mon.certificate_slack(est.gamma, cfg.wbar2, cfg.wbar3),
    })
