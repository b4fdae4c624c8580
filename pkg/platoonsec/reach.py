"""
Stealthy reachable-set geometry.

Once the attack input is eliminated through the residual identity, the follower
state x and the estimation error e form a 10-dimensional linear system
zeta = [x; e] driven by five bounded inputs:

    zeta(k+1) = Acal zeta(k) + B1 w_tilde(k) + B2 w_u(k) + B3 w_e(k+1)
                + B4 w_e(k+2) + B5 r(k+2)

Outer ellipsoids {zeta' P zeta <= alpha_k} of its reachable set are projected on
x and compared against critical half-spaces (collision, overspeed).
"""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import ConfigError, ModelStructureError, ProjectionError
from .model import DiscreteModel, ExtendedModel, PlatoonConfig

if TYPE_CHECKING:
    from .synth import EstimatorDesign, ReachShape

logger = logging.getLogger(__name__)

N_SOURCES = 5
PINV_ATOL = 1e-10
DISTANCE_CONVENTIONS = ("printed", "support")


@dataclass(frozen=True)
class ClosedLoopModel:
    Acal: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    B3: np.ndarray
    B4: np.ndarray
    B5: np.ndarray
    pinv: np.ndarray

    @property
    def inputs(self) -> Tuple[np.ndarray, ...]:
        return self.B1, self.B2, self.B3, self.B4, self.B5

    def step(self, zeta: np.ndarray, w_tilde: np.ndarray, w_u, w_e1: np.ndarray,
             w_e2: np.ndarray, r2: np.ndarray) -> np.ndarray:
        """One step of the residual-driven closed loop; accepts a leading batch axis."""
        w_u = np.asarray(w_u, dtype=float)
        return (zeta @ self.Acal.T + w_tilde @ self.B1.T + w_u[..., None] * self.B2[:, 0]
                + w_e1 @ self.B3.T + w_e2 @ self.B4.T + r2 @ self.B5.T)


def attack_pseudo_inverse(em: ExtendedModel) -> np.ndarray:
    """Moore-Penrose inverse of the column Ce Ae Be1, as a 1x5 row."""
    v = em.attack_direction
    vv = float(v @ v)
    if np.sqrt(vv) < PINV_ATOL:
        raise ModelStructureError(
            f"Ce*Ae*Be1 has norm {np.sqrt(vv):.3e}; the residual identity cannot be inverted")
    return (v / vv)[None, :]


def build_closed_loop(dm: DiscreteModel, em: ExtendedModel,
                      est: "EstimatorDesign") -> ClosedLoopModel:
    pinv = attack_pseudo_inverse(em)
    L = est.L
    M = em.CeAe
    Abar = (np.eye(6) - L @ em.Ce) @ em.Ae
    A, B, G, Be1 = dm.A, dm.B, dm.G, em.Be1

    Acal = np.zeros((10, 10))
    Acal[:4, :4] = A
    Acal[:4, 4:] = G @ pinv @ M @ Abar
    Acal[4:, 4:] = (np.eye(6) - Be1 @ pinv @ M) @ Abar

    B1 = np.vstack([B, np.zeros((6, 3))])
    B2 = np.vstack([-G, np.zeros((6, 1))])
    B3 = np.vstack([-G @ pinv @ M @ L, (Be1 @ pinv @ M - np.eye(6)) @ L])
    B4 = np.vstack([G @ pinv, -Be1 @ pinv])
    B5 = np.vstack([-G @ pinv, Be1 @ pinv])
    return ClosedLoopModel(Acal, B1, B2, B3, B4, B5, pinv)


@dataclass(frozen=True)
class Ellipsoid:
    """{x : x' P x <= alpha}."""

    P: np.ndarray
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"ellipsoid level must be > 0, got {self.alpha!r}")
        if np.linalg.eigvalsh(0.5 * (self.P + self.P.T))[0] <= 0:
            raise ValueError("ellipsoid shape must be positive definite")

    def level(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.P, x)

    def contains(self, x: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
        return self.level(x) <= self.alpha * (1.0 + rtol)

    def support(self, c: np.ndarray) -> float:
        """max c'x over the ellipsoid."""
        c = np.asarray(c, dtype=float)
        return float(np.sqrt(self.alpha * c @ np.linalg.solve(self.P, c)))

    def boundary_samples(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Points with x' P x = alpha, directions uniform on the sphere."""
        d = rng.standard_normal((n, self.P.shape[0]))
        scale = np.sqrt(self.alpha / np.einsum("ni,ij,nj->n", d, self.P, d))
        return d * scale[:, None]


@dataclass(frozen=True)
class HalfSpace:
    c: np.ndarray
    b: float
    label: str = ""


@dataclass(frozen=True)
class CriticalSet:
    """Union of half-spaces {x : c' x > b}."""

    halfspaces: Tuple[HalfSpace, ...]

    def __post_init__(self):
        if not self.halfspaces:
            raise ConfigError("critical", "at least one half-space is required")
        for j, hs in enumerate(self.halfspaces):
            c = np.asarray(hs.c, dtype=float)
            if c.shape != (4,) or not np.any(c):
                raise ConfigError(f"critical[{j}].c", "must be a nonzero 4-vector")
            if hs.b < 0:
                raise ConfigError(
                    f"critical[{j}].b",
                    f"negative offsets put the origin inside the critical set ({hs.b}); "
                    "the distance formula is only defined for b >= 0")

    @classmethod
    def for_platoon(cls, cfg: PlatoonConfig) -> "CriticalSet":
        """Collision (-e - h v > s) and overspeed (v > v_max)."""
        return cls((
            HalfSpace(np.array([-1.0, -cfg.h, 0.0, 0.0]), cfg.s_standstill, "collision"),
            HalfSpace(np.array([0.0, 1.0, 0.0, 0.0]), cfg.v_max, "overspeed"),
        ))

    @property
    def labels(self) -> List[str]:
        return [hs.label or f"h{j + 1}" for j, hs in enumerate(self.halfspaces)]


def alpha_limit(a: float) -> float:
    return (N_SOURCES - a) / (1.0 - a)


def alpha_schedule(shape: "ReachShape", zeta1: np.ndarray, K: int) -> np.ndarray:
    """Levels alpha_1..alpha_K (index 0 holds k = 1)."""
    if K < 1:
        raise ValueError("horizon must be >= 1")
    a = shape.a
    zeta1 = np.asarray(zeta1, dtype=float)
    q = float(zeta1 @ shape.P_zeta @ zeta1)
    powers = a ** np.arange(K)
    return powers * q + (N_SOURCES - a) * (1.0 - powers) / (1.0 - a)


def schur_project(P: np.ndarray, keep: Sequence[int]) -> np.ndarray:
    """Shape of the projection of {z' P z <= alpha} onto the coordinates ``keep``."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    keep = list(keep)
    if len(set(keep)) != len(keep) or any(i < 0 or i >= n for i in keep) or not keep:
        raise ProjectionError(f"invalid projection coordinates {keep} for dimension {n}")
    drop = [i for i in range(n) if i not in keep]
    P1 = P[np.ix_(keep, keep)]
    if not drop:
        return 0.5 * (P1 + P1.T)
    P2 = P[np.ix_(keep, drop)]
    P3 = P[np.ix_(drop, drop)]
    eig = np.linalg.eigvalsh(0.5 * (P3 + P3.T))
    if eig[0] <= 1e-14 * max(abs(eig[-1]), 1.0):
        raise ProjectionError(f"eliminated block is singular (min eigenvalue {eig[0]:.3e})")
    Px = P1 - P2 @ np.linalg.solve(P3, P2.T)
    return 0.5 * (Px + Px.T)


def lift_point(P: np.ndarray, x: np.ndarray, keep: Sequence[int]) -> np.ndarray:
    """Point of the full space over ``x`` minimizing z' P z (e = -P3^-1 P2' x)."""
    P = np.asarray(P, dtype=float)
    keep = list(keep)
    drop = [i for i in range(P.shape[0]) if i not in keep]
    z = np.zeros(P.shape[0])
    z[keep] = x
    if drop:
        z[drop] = -np.linalg.solve(P[np.ix_(drop, drop)], P[np.ix_(keep, drop)].T @ x)
    return z


def project(shape: "ReachShape") -> np.ndarray:
    """P_x = P1 - P2 P3^-1 P2' for the state block of P_zeta."""
    return schur_project(shape.P_zeta, range(4))


def distance_to_critical(P_x: np.ndarray, alpha_k: float, crit: CriticalSet,
                         convention: str = "printed") -> np.ndarray:
    """
    Signed distance from {x' P_x x <= alpha_k} to each critical half-space.

    ``printed`` evaluates (|b| - sqrt(c' P^-1 c / alpha)) / c'c; ``support`` uses the
    support function sqrt(alpha c' P^-1 c) instead. At alpha = 0 the set is the
    origin and both reduce to |b| / c'c.
    """
    if convention not in DISTANCE_CONVENTIONS:
        raise ConfigError("assessment.distance_convention",
                          f"must be one of {DISTANCE_CONVENTIONS}, got {convention!r}")
    if alpha_k < 0:
        raise ValueError(f"alpha_k must be >= 0, got {alpha_k}")
    out = np.empty(len(crit.halfspaces))
    for j, hs in enumerate(crit.halfspaces):
        c = np.asarray(hs.c, dtype=float)
        quad = float(c @ np.linalg.solve(P_x, c))
        if alpha_k == 0:
            reach = 0.0
        elif convention == "printed":
            reach = np.sqrt(quad / alpha_k)
        else:
            reach = np.sqrt(quad * alpha_k)
        out[j] = (abs(hs.b) - reach) / float(c @ c)
    return out


@dataclass
class RiskReport:
    verdict: str
    first_violation_k: Optional[int]
    alpha: np.ndarray
    distances: np.ndarray
    alpha_inf: float
    d_inf: np.ndarray
    labels: List[str]
    convention: str = "printed"
    meta: Dict = field(default_factory=dict)

    @property
    def d_k(self) -> np.ndarray:
        return self.distances.min(axis=1)

    @property
    def horizon(self) -> int:
        return len(self.alpha)

    @property
    def violated(self) -> List[str]:
        bad = (self.distances < 0).any(axis=0) | (self.d_inf < 0)
        return [label for label, flag in zip(self.labels, bad) if flag]

    def to_frame(self) -> pd.DataFrame:
        """d_k schedule; the last row (k = inf) holds the asymptotic level."""
        frame = pd.DataFrame({"k": np.arange(1, self.horizon + 1, dtype=float),
                              "alpha_k": self.alpha})
        for j, label in enumerate(self.labels):
            frame[f"d{j + 1}_k"] = self.distances[:, j]
        frame["d_k"] = self.d_k
        tail = {"k": np.inf, "alpha_k": self.alpha_inf, "d_k": float(self.d_inf.min())}
        for j in range(len(self.labels)):
            tail[f"d{j + 1}_k"] = self.d_inf[j]
        return pd.concat([frame, pd.DataFrame([tail])], ignore_index=True)

    def to_dict(self) -> Dict:
        return {
            "verdict": self.verdict,
            "first_violation_k": self.first_violation_k,
            "violated": self.violated,
            "labels": self.labels,
            "convention": self.convention,
            "horizon": self.horizon,
            "alpha_inf": self.alpha_inf,
            "min_distance": {label: float(min(self.distances[:, j].min(), self.d_inf[j]))
                             for j, label in enumerate(self.labels)},
            "d_inf": self.d_inf.tolist(),
            **self.meta,
        }


def default_zeta1(x1: np.ndarray) -> np.ndarray:
    """[x(1); 0]: no initial estimation error."""
    return np.concatenate([np.asarray(x1, dtype=float), np.zeros(6)])


def assess_risk(shape: "ReachShape", zeta1: np.ndarray, crit: CriticalSet, K: int,
                convention: str = "printed") -> RiskReport:
    """
    Distance schedule over k = 1..K plus the asymptotic level.

    The vehicle is at risk when any distance is negative, including at alpha_inf.
    """
    alpha = alpha_schedule(shape, zeta1, K)
    P_x = shape.P_x
    distances = np.vstack([distance_to_critical(P_x, a_k, crit, convention) for a_k in alpha])
    a_inf = alpha_limit(shape.a)
    d_inf = distance_to_critical(P_x, a_inf, crit, convention)

    negative = np.flatnonzero((distances < 0).any(axis=1))
    first = int(negative[0]) + 1 if negative.size else None
    at_risk = negative.size > 0 or bool((d_inf < 0).any())
    report = RiskReport("at_risk" if at_risk else "risk_free", first, alpha, distances,
                        a_inf, d_inf, crit.labels, convention)
    logger.info("risk assessment: %s (first violation k=%s, min d=%.4g)", report.verdict,
                first, float(min(distances.min(), d_inf.min())))
    return report
