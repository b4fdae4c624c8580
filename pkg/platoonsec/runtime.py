"""
Per-step estimator, residual and monitor logic for one follower vehicle.

All functions accept an optional leading batch axis so the simulator can run
many Monte-Carlo realizations through the same code path.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import NonFiniteStateError
from .model import DiscreteModel, ExtendedModel
from .synth import EstimatorDesign, MonitorDesign

logger = logging.getLogger(__name__)

ALARM_THRESHOLD = 1.0


def _check_finite(k: Optional[int] = None, **arrays) -> None:
    for name, value in arrays.items():
        if not np.all(np.isfinite(value)):
            raise NonFiniteStateError(f"non-finite {name}", k=k)


@dataclass(frozen=True)
class VehicleState:
    """x = [e, v, a, u]: spacing error, velocity, acceleration, control input."""

    e: float
    v: float
    a: float
    u: float

    def __post_init__(self):
        _check_finite(state=np.array(self.as_array()))

    def as_array(self) -> np.ndarray:
        return np.array([self.e, self.v, self.a, self.u], dtype=float)


@dataclass(frozen=True)
class ExtendedState:
    """xe = [x; dv; a_prev] with dv the relative velocity to the predecessor."""

    x: VehicleState
    delta_v: float
    a_prev: float

    def __post_init__(self):
        _check_finite(state=np.array([self.delta_v, self.a_prev]))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.x.as_array(), [self.delta_v, self.a_prev]])

    @classmethod
    def from_array(cls, xe) -> "ExtendedState":
        xe = np.asarray(xe, dtype=float)
        return cls(VehicleState(*xe[:4]), float(xe[4]), float(xe[5]))


@dataclass(frozen=True)
class MonitorVerdict:
    z: float
    alarm: bool
    k: int


def _predict(em: ExtendedModel, xhat: np.ndarray, net_in) -> np.ndarray:
    net_in = np.asarray(net_in, dtype=float)
    return xhat @ em.Ae.T + net_in[..., None] * em.Be[:, 0]


def residual(em: ExtendedModel, xhat: np.ndarray, net_in, y_next: np.ndarray,
             k: Optional[int] = None) -> np.ndarray:
    """r(k+1) = y(k+1) - Ce (Ae x_hat(k) + Be net_in(k))."""
    _check_finite(k, xhat=xhat, net_in=net_in, measurement=y_next)
    return np.asarray(y_next, dtype=float) - _predict(em, np.asarray(xhat, dtype=float),
                                                      net_in) @ em.Ce.T


def estimator_update(est: EstimatorDesign, em: ExtendedModel, xhat: np.ndarray, net_in,
                     y_next: np.ndarray, k: Optional[int] = None
                     ) -> Tuple[np.ndarray, np.ndarray]:
    """(x_hat(k+1), r(k+1)) from one measurement."""
    _check_finite(k, xhat=xhat, net_in=net_in, measurement=y_next)
    pred = _predict(em, np.asarray(xhat, dtype=float), net_in)
    r = np.asarray(y_next, dtype=float) - pred @ em.Ce.T
    return pred + r @ est.L.T, r


def estimator_step(est: EstimatorDesign, em: ExtendedModel, xhat: np.ndarray, net_in,
                   y_next: np.ndarray, k: Optional[int] = None) -> np.ndarray:
    return estimator_update(est, em, xhat, net_in, y_next, k)[0]


def monitor_statistic(mon: MonitorDesign, r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return np.einsum("...i,ij,...j->...", r, mon.Pi, r)


def monitor_step(mon: MonitorDesign, r: np.ndarray, k: int) -> MonitorVerdict:
    """z = r' Pi r; the alarm fires only when z strictly exceeds 1."""
    _check_finite(k, residual=r)
    z = float(monitor_statistic(mon, r))
    return MonitorVerdict(z, z > ALARM_THRESHOLD, k)


def error_step(est: EstimatorDesign, em: ExtendedModel, e: np.ndarray, delta, w_u,
               w_e_next: np.ndarray) -> np.ndarray:
    """e(k+1) = Abar e(k) - Lbar Be1 (delta + w_u) - L w_e(k+1)."""
    Lbar_Be1 = ((np.eye(em.Ae.shape[0]) - est.L @ em.Ce) @ em.Be1)[:, 0]
    push = np.asarray(delta, dtype=float) + np.asarray(w_u, dtype=float)
    return (np.asarray(e) @ est.error_matrix(em).T - push[..., None] * Lbar_Be1
            - np.asarray(w_e_next) @ est.L.T)


@dataclass(frozen=True)
class TraceRecord:
    k: int
    xhat: np.ndarray
    r: np.ndarray
    z: float
    alarm: bool


@dataclass
class VehicleMonitor:
    """
    Streaming estimator + detector for one vehicle.

    Alarms are recorded and monitoring continues; nothing is switched in the
    control path.
    """

    est: EstimatorDesign
    em: ExtendedModel
    mon: MonitorDesign
    xhat: np.ndarray
    k: int = 0
    alarm_times: List[int] = field(default_factory=list)

    def __post_init__(self):
        self.xhat = np.array(self.xhat, dtype=float)
        _check_finite(self.k, xhat=self.xhat)

    def step(self, net_in: float, y_next: np.ndarray) -> TraceRecord:
        self.xhat, r = estimator_update(self.est, self.em, self.xhat, net_in, y_next, self.k)
        self.k += 1
        verdict = monitor_step(self.mon, r, self.k)
        if verdict.alarm:
            self.alarm_times.append(self.k)
            logger.debug("alarm at k=%d (z=%.3f)", self.k, verdict.z)
        return TraceRecord(self.k, self.xhat.copy(), r, verdict.z, verdict.alarm)


class BaselineEstimator:
    """
    Observer on the 4-state follower model that treats the received command as a
    known input. Any injection on that command is absorbed into the prediction,
    so its residual does not see the attack at all.
    """

    def __init__(self, dm: DiscreteModel, gain: Optional[np.ndarray] = None):
        self.dm = dm
        self.gain = 0.5 * np.eye(dm.n) if gain is None else np.asarray(gain, dtype=float)

    def update(self, xhat: np.ndarray, v_prev_meas, net_in, y_next: np.ndarray,
               k: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        _check_finite(k, xhat=xhat, v_prev=v_prev_meas, net_in=net_in, measurement=y_next)
        xhat = np.asarray(xhat, dtype=float)
        v_prev_meas = np.asarray(v_prev_meas, dtype=float)
        net_in = np.asarray(net_in, dtype=float)
        w_known = np.stack([np.zeros_like(net_in), v_prev_meas, net_in], axis=-1)
        pred = xhat @ self.dm.A.T + w_known @ self.dm.B.T
        r = np.asarray(y_next, dtype=float) - pred
        return pred + r @ self.gain.T, r
