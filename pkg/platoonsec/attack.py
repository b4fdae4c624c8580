"""
Admissible noise and stealthy V2V injection sequences.

The attacker acts on the received command; delta(k) first shows up in the
residual r(k+2) along v = Ce Ae Be1:

    r(k+2) = base(k) - v delta(k)

so each step is a scalar problem over the interval where the predicted
r' Pi r stays below the margin.

Randomness is counter-based: every draw comes from a generator keyed by
(seed, batch, vehicle, stream, k), so a batch can be regenerated independently
of the others and of the order it is scheduled in.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import eigh

from .errors import ConfigError
from .model import DiscreteModel, ExtendedModel
from .synth import EstimatorDesign, MonitorDesign

logger = logging.getLogger(__name__)

NOISE_KINDS = ("uniform_ball", "boundary", "worst_corner")
ATTACK_KINDS = ("none", "random_stealthy", "greedy_direction")
KNOWLEDGE = ("oracle", "nominal", "robust")

# stream ids keep noise and attack draws independent
STREAM_NOISE = 0
STREAM_ATTACK = 1
STREAM_INIT = 2


def keyed_rng(seed: int, batch: int, stream: int, k: int,
              vehicle: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(batch), int(vehicle), int(stream), int(k)])


def uniform_ball(rng: np.random.Generator, n: int, dim: int, radius: float) -> np.ndarray:
    """Uniform samples in the dim-ball: normalized Gaussian times radius * U^(1/dim)."""
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (radius * rng.random(n) ** (1.0 / dim))[:, None]


def sphere(rng: np.random.Generator, n: int, dim: int, radius: float) -> np.ndarray:
    g = rng.standard_normal((n, dim))
    return radius * g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass(frozen=True)
class NoisePolicy:
    """Peak-bounded noise: |w_tilde|^2 <= wbar1, w_u^2 <= wbar2, |w_e|^2 <= wbar3."""

    kind: str = "uniform_ball"
    bounds: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError("noise.kind", f"must be one of {NOISE_KINDS}, got {self.kind!r}")
        if len(self.bounds) != 3 or any(not b > 0 for b in self.bounds):
            raise ConfigError("noise.bounds", f"all three bounds must be > 0, got {self.bounds}")

    @property
    def radii(self) -> Tuple[float, float, float]:
        return tuple(float(np.sqrt(b)) for b in self.bounds)


@dataclass(frozen=True)
class NoiseSample:
    omega_tilde: np.ndarray
    omega_u: np.ndarray
    omega_e: np.ndarray


def gen_noise(policy: NoisePolicy, k: int, n_runs: Optional[int] = None, batch: int = 0,
              vehicle: int = 0) -> NoiseSample:
    """
    Noise for step k. With ``n_runs`` the arrays carry a leading run axis,
    otherwise a single sample is returned.
    """
    n = 1 if n_runs is None else int(n_runs)
    rng = keyed_rng(policy.seed, batch, STREAM_NOISE, k, vehicle)
    r1, r2, r3 = policy.radii
    if policy.kind == "uniform_ball":
        wt = uniform_ball(rng, n, 3, r1)
        wu = rng.uniform(-r2, r2, n)
        we = uniform_ball(rng, n, 5, r3)
    elif policy.kind == "boundary":
        wt = sphere(rng, n, 3, r1)
        wu = r2 * rng.choice([-1.0, 1.0], n)
        we = sphere(rng, n, 5, r3)
    else:
        wt = r1 * rng.choice([-1.0, 1.0], (n, 3)) / np.sqrt(3.0)
        wu = r2 * rng.choice([-1.0, 1.0], n)
        we = r3 * rng.choice([-1.0, 1.0], (n, 5)) / np.sqrt(5.0)
    if n_runs is None:
        return NoiseSample(wt[0], wu[0], we[0])
    return NoiseSample(wt, wu, we)


@dataclass(frozen=True)
class AttackPolicy:
    """
    Constructive stealthy attacker.

    ``knowledge`` decides what the attacker predicts with: the realized noise and
    error (oracle), a noise-free copy of the error dynamics (nominal), or the
    nominal copy with the target ellipsoid shrunk by the worst-case noise (robust).
    Only the oracle keeps z <= margin on every feasible step; the nominal attacker
    adds at most sqrt(margin) to the attack-free sqrt(z).
    """

    kind: str = "none"
    margin: float = 0.8
    target_direction: Optional[Tuple[float, ...]] = None
    knowledge: str = "nominal"
    lookahead: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError("attack.kind", f"must be one of {ATTACK_KINDS}, got {self.kind!r}")
        if not 0.0 < self.margin <= 1.0:
            raise ConfigError("attack.margin", f"must lie in (0, 1], got {self.margin}")
        if self.knowledge not in KNOWLEDGE:
            raise ConfigError("attack.knowledge",
                              f"must be one of {KNOWLEDGE}, got {self.knowledge!r}")
        if self.lookahead < 1:
            raise ConfigError("attack.lookahead", "must be >= 1")
        if self.kind == "greedy_direction":
            if self.target_direction is None or len(self.target_direction) != 4:
                raise ConfigError("attack.target_direction",
                                  "greedy_direction needs a 4-vector direction in x")
            if not np.any(self.target_direction):
                raise ConfigError("attack.target_direction", "must be nonzero")


@dataclass(frozen=True)
class AttackerState:
    """What the attacker predicts r(k+2) from: e(k), w_u(k), w_e(k+1), w_e(k+2)."""

    e: np.ndarray
    w_u: np.ndarray
    w_e1: np.ndarray
    w_e2: np.ndarray


@dataclass(frozen=True)
class AttackStep:
    delta: np.ndarray
    feasible: np.ndarray


def noise_margin(mon: MonitorDesign, est: EstimatorDesign, em: ExtendedModel,
                 bounds: Tuple[float, float, float]) -> float:
    """Worst-case Pi-norm of the noise part of r(k+2)."""
    w, V = eigh(mon.Pi)
    half = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    M = em.CeAe
    _, r2, r3 = (float(np.sqrt(b)) for b in bounds)
    return (np.linalg.norm(half @ M @ em.Be1, 2) * r2
            + np.linalg.norm(half @ M @ est.L, 2) * r3
            + np.linalg.norm(half, 2) * r3)


def feasible_interval(mon: MonitorDesign, v: np.ndarray, base: np.ndarray, level: float
                      ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Interval of delta with (base - v delta)' Pi (base - v delta) <= level, per run.

    Returns (lo, hi, feasible, minimizer).
    """
    Pi_v = mon.Pi @ v
    p = float(v @ Pi_v)
    q = base @ Pi_v
    c = np.einsum("ni,ij,nj->n", base, mon.Pi, base)
    disc = q ** 2 - p * (c - level)
    feasible = disc >= 0
    root = np.sqrt(np.clip(disc, 0.0, None))
    return (q - root) / p, (q + root) / p, feasible, q / p


def gen_stealthy_attack(policy: AttackPolicy, mon: MonitorDesign, est: EstimatorDesign,
                        em: ExtendedModel, state: AttackerState, k: int,
                        dm: Optional[DiscreteModel] = None, level: Optional[float] = None,
                        batch: int = 0, vehicle: int = 0) -> AttackStep:
    """
    delta(k) for every run in ``state`` (leading axis).

    Infeasible steps get the delta minimizing the predicted r' Pi r and are flagged.
    """
    e = np.atleast_2d(state.e)
    n = e.shape[0]
    if policy.kind == "none":
        return AttackStep(np.zeros(n), np.ones(n, dtype=bool))

    M = em.CeAe
    v = em.attack_direction
    Abar = est.error_matrix(em)
    w_u = np.broadcast_to(np.asarray(state.w_u, dtype=float), (n,))
    e_next = e @ Abar.T - w_u[:, None] * em.Be1[:, 0] - np.atleast_2d(state.w_e1) @ est.L.T
    base = e_next @ M.T + np.atleast_2d(state.w_e2)
    level = policy.margin if level is None else level
    lo, hi, feasible, best = feasible_interval(mon, v, base, level)

    if policy.kind == "random_stealthy":
        rng = keyed_rng(policy.seed, batch, STREAM_ATTACK, k, vehicle)
        w, V = eigh(mon.Pi)
        inv_half = (V / np.sqrt(w)) @ V.T
        target = uniform_ball(rng, n, v.size, np.sqrt(policy.margin)) @ inv_half.T
        delta = (base - target) @ v / float(v @ v)
        delta = np.where(feasible, np.clip(delta, lo, hi), best)
    else:
        if dm is None:
            raise ConfigError("attack.kind", "greedy_direction needs the discrete follower model")
        direction = np.asarray(policy.target_direction, dtype=float)
        gain = float(direction @ lookahead_gain(dm, policy.lookahead))
        delta = np.where(feasible, hi if gain >= 0 else lo, best)

    if not feasible.all():
        logger.debug("k=%d: %d/%d attack steps infeasible, using residual minimizer",
                     k, int((~feasible).sum()), n)
    return AttackStep(delta, feasible)


def lookahead_gain(dm: DiscreteModel, horizon: int) -> np.ndarray:
    """sum_{j<H} A^j Gamma: effect on x of a delta held for H steps."""
    total = np.zeros(dm.A.shape[0])
    term = dm.G[:, 0].copy()
    for _ in range(horizon):
        total += term
        term = dm.A @ term
    return total


class StealthyAttacker:
    """
    Per-batch attacker. Non-oracle attackers track a noise-free copy of the
    estimation error driven by their own injections.
    """

    def __init__(self, policy: AttackPolicy, mon: MonitorDesign, est: EstimatorDesign,
                 em: ExtendedModel, dm: DiscreteModel, bounds: Tuple[float, float, float]):
        self.policy = policy
        self.mon, self.est, self.em, self.dm = mon, est, em, dm
        self.level = policy.margin
        if policy.knowledge == "robust":
            rho = noise_margin(mon, est, em, bounds)
            self.level = max(np.sqrt(policy.margin) - rho, 0.0) ** 2
            if self.level == 0.0:
                logger.warning("robust attacker: noise margin %.3g leaves no stealthy room", rho)
        self._Abar = est.error_matrix(em)
        self.e_copy: Optional[np.ndarray] = None

    def reset(self, e0: np.ndarray) -> None:
        self.e_copy = np.array(e0, dtype=float)

    def step(self, k: int, e: np.ndarray, w_u: np.ndarray, w_e1: np.ndarray,
             w_e2: np.ndarray, batch: int = 0, vehicle: int = 0) -> AttackStep:
        if self.policy.kind == "none":
            return AttackStep(np.zeros(e.shape[0]), np.ones(e.shape[0], dtype=bool))
        if self.policy.knowledge == "oracle":
            state = AttackerState(e, w_u, w_e1, w_e2)
        else:
            if self.e_copy is None:
                self.reset(np.zeros_like(e))
            zeros = np.zeros_like(w_e1)
            state = AttackerState(self.e_copy, np.zeros_like(w_u), zeros, zeros)
        out = gen_stealthy_attack(self.policy, self.mon, self.est, self.em, state, k,
                                  self.dm, self.level, batch, vehicle)
        if self.policy.knowledge != "oracle":
            self.e_copy = self.e_copy @ self._Abar.T - out.delta[:, None] * self.em.Be1[:, 0]
        return out
