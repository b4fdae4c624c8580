"""
Platoon dynamics: continuous closed-loop CACC model, extended estimator model,
virtual lead vehicle, and their exact zero-order-hold discretization.

State conventions
-----------------
Follower i (4 states):   x  = [e_i, v_i, a_i, u_i]
Extended model (6):      xe = [e_i, v_i, a_i, u_i, dv_i, a_{i-1}]
Lead model (4):          x0 = [e_0, v_0, a_0, u_0] driven by the external input eps_0

Perturbation vector of the 4-state model:
    w_tilde = [w_d, v_{i-1} + w_v, u_{i-1} + w_u]
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, ModelStructureError

logger = logging.getLogger(__name__)

HOLD_MODES = ("decoupled", "zoh")

# Structural identities are checked relative to the norms involved.
STRUCTURE_RTOL = 1e-10
RANK_ATOL = 1e-6


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PlatoonConfig:
    """
    Physical and controller parameters shared by every vehicle of a homogeneous string.

    Attributes:
        h: time headway (s)
        tau: driveline time constant (s)
        kp, kd: CACC feedback gains
        Ts: sampling interval (s)
        s_standstill: standstill distance (m)
        v_max: maximum velocity (m/s)
        u_min, u_max: desired-acceleration envelope (m/s^2)
        wbar1, wbar2, wbar3: squared peak bounds on w_tilde, w_u and w_e
    """

    h: float
    tau: float
    kp: float
    kd: float
    Ts: float
    s_standstill: float = 3.0
    v_max: float = 35.0
    u_min: float = -2.5
    u_max: float = 3.0
    wbar1: float = 1.0
    wbar2: float = 1.0
    wbar3: float = 1.0

    def __post_init__(self):
        for name in ("h", "tau", "kp", "kd", "Ts", "s_standstill", "v_max",
                     "u_min", "u_max", "wbar1", "wbar2", "wbar3"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ConfigError(name, f"must be finite, got {value!r}")
        for name in ("h", "tau", "Ts", "kp", "kd", "v_max"):
            if getattr(self, name) <= 0:
                raise ConfigError(name, f"must be > 0, got {getattr(self, name)!r}")
        if self.kd <= self.kp * self.tau:
            raise ConfigError(
                "kd", f"string stability requires kd > kp*tau ({self.kd} <= {self.kp * self.tau})")
        if self.s_standstill < 0:
            raise ConfigError("s_standstill", "must be >= 0")
        if self.u_min >= self.u_max:
            raise ConfigError("u_min", f"must be < u_max ({self.u_min} >= {self.u_max})")
        for name in ("wbar1", "wbar2", "wbar3"):
            if getattr(self, name) <= 0:
                raise ConfigError(name, "noise bounds must be > 0")

    @property
    def gains(self) -> Tuple[float, float]:
        return self.kp, self.kd

    @property
    def bounds(self) -> Tuple[float, float, float]:
        return self.wbar1, self.wbar2, self.wbar3


def derive_noise_bounds(v_max: float, u_min: float, u_max: float, omega_d: float,
                        omega_v: float, omega_u: float,
                        omega_e: float) -> Tuple[float, float, float]:
    """
    Squared peak bounds (wbar1, wbar2, wbar3) from component sensor peaks.

    w_tilde stacks the disturbance, the predecessor velocity and the received
    acceleration command, so its bound includes the speed and command envelopes.
    """
    for name, value in (("omega_d", omega_d), ("omega_v", omega_v),
                        ("omega_u", omega_u), ("omega_e", omega_e)):
        if value < 0:
            raise ConfigError(f"noise.{name}", "component bounds must be >= 0")
    wbar1 = omega_d ** 2 + (v_max + omega_v) ** 2 + (max(abs(u_min), abs(u_max)) + omega_u) ** 2
    return wbar1, omega_u ** 2, omega_e ** 2


@dataclass(frozen=True)
class ContinuousModel:
    Ac: np.ndarray
    Bc: np.ndarray
    Gc: np.ndarray


@dataclass(frozen=True)
class DiscreteModel:
    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    Ts: float

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class ExtendedModel:
    """Discretized estimator-design model; Be1 carries u_{i-1}, Be2 the received command."""

    Ae: np.ndarray
    Be1: np.ndarray
    Be2: np.ndarray
    Be: np.ndarray
    Ce: np.ndarray
    Ts: float
    hold: str = "decoupled"

    @property
    def CeAe(self) -> np.ndarray:
        return self.Ce @ self.Ae

    @property
    def attack_direction(self) -> np.ndarray:
        """Ce Ae Be1 as a 5-vector: the residual direction an attack can steer."""
        return (self.Ce @ self.Ae @ self.Be1).ravel()


def zoh(Ac: np.ndarray, U: np.ndarray, Ts: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact zero-order-hold discretization of dx/dt = Ac x + U w.

    Both blocks come out of one exponential of the augmented matrix
    [[Ac, U], [0, 0]] * Ts, whose top-right block is the input integral.
    """
    if Ts <= 0:
        raise ConfigError("Ts", f"must be > 0, got {Ts!r}")
    n = Ac.shape[0]
    m = U.shape[1]
    M = np.zeros((n + m, n + m))
    M[:n, :n] = Ac
    M[:n, n:] = U
    phi = expm(M * Ts)
    return phi[:n, :n], phi[:n, n:]


def build_continuous(cfg: PlatoonConfig) -> ContinuousModel:
    """Closed-loop follower dynamics dx = Ac x + Bc w_tilde + Gc delta."""
    h, tau, kp, kd = cfg.h, cfg.tau, cfg.kp, cfg.kd
    Ac = np.array([
        [0.0, -1.0, -h, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, -1.0 / tau, 1.0 / tau],
        [kp / h, -kd / h, -kd, -1.0 / h],
    ])
    Bc = np.array([
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0],
        [kp / h, kd / h, 1.0 / h],
    ])
    Gc = np.array([[0.0], [0.0], [0.0], [1.0 / h]])
    return ContinuousModel(_frozen(Ac), _frozen(Bc), _frozen(Gc))


def discretize(cm: ContinuousModel, Ts: float) -> DiscreteModel:
    A, BG = zoh(cm.Ac, np.hstack([cm.Bc, cm.Gc]), Ts)
    nb = cm.Bc.shape[1]
    return DiscreteModel(_frozen(A), _frozen(BG[:, :nb]), _frozen(BG[:, nb:]), float(Ts))


def build_extended_continuous(
        cfg: PlatoonConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Continuous extended matrices (A_ce, B_ce1, B_ce2, Ce)."""
    h, tau, kp, kd = cfg.h, cfg.tau, cfg.kp, cfg.kd
    A_ce = np.array([
        [0.0, 0.0, -h, 0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, -1.0 / tau, 1.0 / tau, 0.0, 0.0],
        [kp / h, 0.0, -kd, -1.0 / h, kd / h, 0.0],
        [0.0, 0.0, -1.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, -1.0 / tau],
    ])
    B_ce1 = np.zeros((6, 1))
    B_ce1[5, 0] = 1.0 / tau
    B_ce2 = np.zeros((6, 1))
    B_ce2[3, 0] = 1.0 / h
    Ce = np.hstack([np.eye(5), np.zeros((5, 1))])
    return A_ce, B_ce1, B_ce2, Ce


def build_extended(cfg: PlatoonConfig, hold: str = "decoupled") -> ExtendedModel:
    """
    Discretized extended model.

    With hold="decoupled" the predecessor command reaches a_{i-1} through its own
    first-order lag during the sample, so Be1 only touches the last state and
    Ce Be1 vanishes identically. hold="zoh" keeps the exact integral, which leaks
    into dv within one sample and fails the structural check.
    """
    if hold not in HOLD_MODES:
        raise ConfigError("model.feedforward_hold", f"must be one of {HOLD_MODES}, got {hold!r}")
    A_ce, B_ce1, B_ce2, Ce = build_extended_continuous(cfg)
    Ae, B12 = zoh(A_ce, np.hstack([B_ce1, B_ce2]), cfg.Ts)
    Be1_zoh, Be2 = B12[:, :1], B12[:, 1:]

    if hold == "decoupled":
        Be1 = np.zeros((6, 1))
        Be1[5, 0] = 1.0 - np.exp(-cfg.Ts / cfg.tau)
    else:
        Be1 = Be1_zoh
    Be = Be1 + Be2

    em = ExtendedModel(_frozen(Ae), _frozen(Be1), _frozen(Be2), _frozen(Be),
                       _frozen(Ce), float(cfg.Ts), hold)
    check_extended(em, B_ce=B_ce1 + B_ce2, A_ce=A_ce)
    return em


def check_extended(em: ExtendedModel, B_ce: np.ndarray = None, A_ce: np.ndarray = None) -> None:
    """Raise ModelStructureError unless Ce Be1 = 0 and Ce Ae Be1 != 0."""
    CeBe1 = em.Ce @ em.Be1
    scale = max(np.linalg.norm(em.Ce) * np.linalg.norm(em.Be1), 1.0)
    if np.max(np.abs(CeBe1)) > STRUCTURE_RTOL * scale:
        raise ModelStructureError(
            f"Ce*Be1 must vanish, got max |Ce*Be1| = {np.max(np.abs(CeBe1)):.3e} "
            f"(feedforward hold {em.hold!r})")
    v = em.attack_direction
    if np.linalg.norm(v) < RANK_ATOL:
        raise ModelStructureError(
            f"Ce*Ae*Be1 is numerically zero (norm {np.linalg.norm(v):.3e}); "
            "attack channel not observable in the residual")
    if not np.allclose(em.Be, em.Be1 + em.Be2, rtol=0.0, atol=1e-14):
        raise ModelStructureError("Be differs from Be1 + Be2")
    if em.hold == "zoh" and B_ce is not None and A_ce is not None:
        _, Be_direct = zoh(A_ce, B_ce, em.Ts)
        if not np.allclose(Be_direct, em.Be, rtol=1e-10, atol=1e-12):
            raise ModelStructureError("Be1 + Be2 does not match the discretized B_ce")


def lead_continuous(cfg: PlatoonConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Virtual reference vehicle. Only the last row is driven: u_0 follows eps_0
    through a first-order lag with time constant h.
    """
    h, tau = cfg.h, cfg.tau
    A0 = np.array([
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, -1.0 / tau, 1.0 / tau],
        [0.0, 0.0, 0.0, -1.0 / h],
    ])
    B0 = np.array([[0.0], [0.0], [0.0], [1.0 / h]])
    return A0, B0


def build_lead_model(cfg: PlatoonConfig) -> DiscreteModel:
    """Discretized lead model; G is zero (the lead has no V2V input)."""
    A, B = zoh(*lead_continuous(cfg), cfg.Ts)
    return DiscreteModel(_frozen(A), _frozen(B), _frozen(np.zeros((4, 1))), float(cfg.Ts))
