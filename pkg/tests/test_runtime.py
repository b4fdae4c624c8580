"""
Estimator, residual and monitor at run time.

 Group 1: residual identities (exact start, error form, dual path)
 Group 2: monitor statistic and alarm boundary
 Group 3: streaming VehicleMonitor
 Group 4: baseline observer blindness
 Group 5: input guards
"""

import numpy as np
import pytest

from platoonsec.errors import NonFiniteStateError
from platoonsec.runtime import (BaselineEstimator, ExtendedState, VehicleMonitor, VehicleState,
                                error_step, estimator_step, estimator_update, monitor_statistic,
                                monitor_step, residual)

from conftest import hand_estimator, hand_monitor


def plant_step(em, xe, u_true, net_in):
    """Extended follower: true predecessor command on Be1, received command on Be2."""
    return em.Ae @ xe + em.Be1[:, 0] * u_true + em.Be2[:, 0] * net_in


# Group 1 ----------------------------------------------------------------------

def test_exact_start_without_noise_gives_zero_residual(models, rng):
    _, em = models
    est = hand_estimator()
    xe = np.array([0.3, 25.0, 0.1, 0.2, -0.4, 0.05])
    xhat = xe.copy()
    for k in range(100):
        u = float(rng.uniform(-2.0, 2.0))
        xe = plant_step(em, xe, u, u)
        xhat, r = estimator_update(est, em, xhat, u, em.Ce @ xe, k)
        np.testing.assert_allclose(r, 0.0, atol=1e-9)
    np.testing.assert_allclose(xhat, xe, atol=1e-9)


def test_residual_is_projected_error_plus_noise(models, rng):
    _, em = models
    for _ in range(50):
        xe = rng.standard_normal(6)
        xhat = rng.standard_normal(6)
        u = float(rng.standard_normal())
        w_u = float(rng.standard_normal())
        w_e = 0.1 * rng.standard_normal(5)
        y = em.Ce @ plant_step(em, xe, u, u + w_u) + w_e
        r = residual(em, xhat, u + w_u, y)
        # Ce Be1 = 0 hides the command mismatch for one step
        np.testing.assert_allclose(r, em.CeAe @ (xe - xhat) + w_e, atol=1e-10)


def test_error_recursion_matches_estimator_path(models, rng):
    _, em = models
    est = hand_estimator(0.3)
    xe = rng.standard_normal(6)
    xhat = xe + 0.5 * rng.standard_normal(6)
    e = xe - xhat
    for k in range(30):
        u = float(rng.standard_normal())
        delta = float(rng.uniform(-1.0, 1.0))
        w_u = 0.01 * float(rng.standard_normal())
        w_e = 0.1 * rng.standard_normal(5)
        net_in = u + delta + w_u
        xe = plant_step(em, xe, u, net_in)
        xhat = estimator_step(est, em, xhat, net_in, em.Ce @ xe + w_e, k)
        e = error_step(est, em, e, delta, w_u, w_e)
        np.testing.assert_allclose(xe - xhat, e, atol=1e-10)


def test_batched_update_matches_rows(models, rng):
    _, em = models
    est = hand_estimator()
    xhat = rng.standard_normal((3, 6))
    net_in = rng.standard_normal(3)
    y = rng.standard_normal((3, 5))
    batch, r_batch = estimator_update(est, em, xhat, net_in, y)
    for i in range(3):
        row, r_row = estimator_update(est, em, xhat[i], net_in[i], y[i])
        np.testing.assert_allclose(batch[i], row, atol=1e-12)
        np.testing.assert_allclose(r_batch[i], r_row, atol=1e-12)


# Group 2 ----------------------------------------------------------------------

def test_alarm_only_above_threshold():
    mon = hand_monitor(4.0)
    r = np.array([0.5, 0.0, 0.0, 0.0, 0.0])
    on_boundary = monitor_step(mon, r, 7)
    assert on_boundary.z == 1.0
    assert not on_boundary.alarm
    assert on_boundary.k == 7
    assert monitor_step(mon, r * (1 + 1e-9), 8).alarm


def test_statistic_scales_quadratically(rng):
    mon = hand_monitor(3.0)
    r = rng.standard_normal(5)
    z = float(monitor_statistic(mon, r))
    for s in (0.1, 2.0, 10.0):
        assert float(monitor_statistic(mon, s * r)) == pytest.approx(s * s * z)
    batch = monitor_statistic(mon, np.stack([r, 2 * r]))
    np.testing.assert_allclose(batch, [z, 4 * z])


# Group 3 ----------------------------------------------------------------------

def test_vehicle_monitor_records_alarm_time(models):
    _, em = models
    monitor = VehicleMonitor(hand_estimator(0.1), em, hand_monitor(10.0), np.zeros(6))
    records = []
    for k in range(1, 6):
        y = np.zeros(5)
        if k == 3:
            y[0] = 1.0
        records.append(monitor.step(0.0, y))
    assert [rec.k for rec in records] == [1, 2, 3, 4, 5]
    assert not any(rec.alarm for rec in records[:2])
    assert records[2].alarm and records[2].z == pytest.approx(10.0)
    assert monitor.alarm_times[0] == 3
    assert monitor.k == 5


# Group 4 ----------------------------------------------------------------------

def test_baseline_observer_absorbs_injection(models):
    dm, em = models
    delta, u_prev, v_prev = 0.5, 0.2, 30.0
    x = np.array([0.0, 30.0, 0.0, 0.0])
    net_in = u_prev + delta
    x_next = dm.A @ x + dm.B @ np.array([0.0, v_prev, u_prev]) + dm.G[:, 0] * delta
    baseline = BaselineEstimator(dm)
    _, r = baseline.update(x, v_prev, net_in, x_next)
    np.testing.assert_allclose(r, 0.0, atol=1e-10)


def test_extended_estimator_sees_injection_one_step_late(models):
    _, em = models
    est = hand_estimator()
    delta, u = 0.5, 0.2
    xe = np.array([0.0, 30.0, 0.0, 0.0, 0.0, 0.0])
    xhat = xe.copy()
    residuals = []
    for k in range(2):
        injected = delta if k == 0 else 0.0
        xe = plant_step(em, xe, u, u + injected)
        xhat, r = estimator_update(est, em, xhat, u + injected, em.Ce @ xe, k)
        residuals.append(r)
    np.testing.assert_allclose(residuals[0], 0.0, atol=1e-10)
    np.testing.assert_allclose(residuals[1], -em.attack_direction * delta, atol=1e-10)
    assert np.linalg.norm(residuals[1]) > 0


# Group 5 ----------------------------------------------------------------------

def test_non_finite_inputs_rejected(models):
    _, em = models
    est = hand_estimator()
    xhat = np.zeros(6)
    xhat[2] = np.nan
    with pytest.raises(NonFiniteStateError):
        residual(em, xhat, 0.0, np.zeros(5), k=4)
    with pytest.raises(NonFiniteStateError):
        estimator_update(est, em, np.zeros(6), np.inf, np.zeros(5))
    with pytest.raises(NonFiniteStateError):
        monitor_step(hand_monitor(), np.full(5, np.nan), 1)
    with pytest.raises(NonFiniteStateError):
        VehicleState(0.0, np.nan, 0.0, 0.0)


def test_extended_state_layout():
    xe = np.array([0.1, 20.0, 0.3, 0.4, -0.5, 0.6])
    state = ExtendedState.from_array(xe)
    assert state.x.v == 20.0
    assert state.delta_v == -0.5
    np.testing.assert_array_equal(state.as_array(), xe)
