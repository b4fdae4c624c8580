"""
Estimator, monitor and reach-set synthesis on the nominal gains (coarse grids).

 Group 1: estimator (gain recovery, Schur stability, ISS certificate)
 Group 2: monitor (certificate, monotonicity in the noise bound, degenerate bounds)
 Group 3: reach shape (multipliers, projection, coordinate scaling, weight assembly)
 Group 4: fixed-scalar programs are genuine LMIs
"""

import math

import numpy as np
import pytest

from platoonsec.errors import SynthesisError
from platoonsec.reach import build_closed_loop, lift_point
from platoonsec.synth import (SOURCE_DIMS, estimator_problem, input_weights, monitor_problem,
                              reach_problem, reach_scaling, source_weights, synth_estimator,
                              synth_monitor, synth_reach_shape)

from conftest import COARSE


# Group 1 ----------------------------------------------------------------------

def test_estimator_gain_recovered_from_lmi_variables(safe_designs):
    est = safe_designs.estimator
    np.testing.assert_allclose(est.P_lyap @ est.L, est.Y, atol=1e-8)
    assert np.linalg.eigvalsh(est.P_lyap)[0] > 0
    assert est.mu1 > 0 and est.mu2 > 0
    assert 0.0 < est.alpha_decay < 1.0


def test_estimator_error_dynamics_schur(safe_designs, models):
    _, em = models
    assert safe_designs.estimator.spectral_radius(em) < 1.0
    assert safe_designs.meta["spectral_radius"] < 1.0


def test_gamma_is_geometric_mean(safe_designs):
    est = safe_designs.estimator
    assert est.gamma == pytest.approx(math.sqrt(est.mu1 * est.mu2))
    assert est.gamma <= 0.5 * (est.mu1 + est.mu2) + 1e-12


def test_dissipation_inequality_on_random_samples(safe_designs, models, rng):
    _, em = models
    est = safe_designs.estimator
    scale = max(1.0, float(np.linalg.norm(est.P_lyap, 2)), est.mu1) ** 2
    for _ in range(1000):
        e = rng.standard_normal(6) * rng.uniform(0.01, 10.0)
        w_u = float(rng.standard_normal())
        w_e = rng.standard_normal(5)
        e_next = est.next_error(em, e, w_u, w_e)
        size = e @ e + w_u ** 2 + w_e @ w_e + e_next @ e_next
        assert est.dissipation_gap(em, e, w_u, w_e) <= 1e-5 * scale * size


def test_iss_constants(safe_designs):
    est = safe_designs.estimator
    c, lam, gamma = est.iss_constants()
    # P >= I / mu2 makes c at least one
    assert c >= 1.0 - 1e-6
    assert lam == pytest.approx(math.sqrt(1.0 - est.alpha_decay))
    assert gamma == pytest.approx(est.gamma)
    assert est.error_bound(0, 2.0, 0.0) == pytest.approx(2.0 * c)


def test_noise_free_error_decays_geometrically(safe_designs, models, rng):
    _, em = models
    est = safe_designs.estimator
    c, lam, _ = est.iss_constants()
    e = rng.standard_normal(6)
    e0 = np.linalg.norm(e)
    for k in range(1, 200):
        e = est.next_error(em, e, 0.0, np.zeros(5))
        assert np.linalg.norm(e) <= c * lam ** k * e0 * (1 + 1e-3) + 1e-12


# Group 2 ----------------------------------------------------------------------

def test_monitor_certificate(safe_designs, models, platoon_cfg):
    _, em = models
    mon, est = safe_designs.monitor, safe_designs.estimator
    assert np.linalg.eigvalsh(mon.Pi)[0] > 0
    assert mon.Pi.shape == (5, 5)
    assert mon.certificate_slack(est.gamma, platoon_cfg.wbar2, platoon_cfg.wbar3) >= -1e-6
    problem = monitor_problem(em, est.gamma, platoon_cfg.wbar2, platoon_cfg.wbar3)
    values = {"Pi": mon.Pi, "lambda1": mon.lambda1, "lambda2": mon.lambda2}
    assert problem.lmis[0].violation(values) <= 1e-6


def test_larger_measurement_noise_never_shrinks_monitor(safe_designs, models, platoon_cfg):
    _, em = models
    est = safe_designs.estimator
    wbar2, wbar3 = platoon_cfg.wbar2, platoon_cfg.wbar3
    tight = synth_monitor(em, est, wbar2, wbar3, COARSE)
    loose = synth_monitor(em, est, wbar2, 2.0 * wbar3, COARSE)
    assert np.linalg.slogdet(loose.Pi)[1] <= np.linalg.slogdet(tight.Pi)[1] + 1e-4


@pytest.mark.parametrize("wbar2, wbar3", [(0.0, 0.02), (1e-4, 0.0), (0.0, 0.0)])
def test_degenerate_noise_bounds_rejected(safe_designs, models, wbar2, wbar3):
    _, em = models
    with pytest.raises(SynthesisError, match="positive noise bounds"):
        synth_monitor(em, safe_designs.estimator, wbar2, wbar3, COARSE)


# Group 3 ----------------------------------------------------------------------

def test_reach_multipliers(safe_designs):
    shape = safe_designs.reach
    assert len(shape.weights) == 5
    assert all(0.0 <= w <= 1.0 for w in shape.weights)
    assert sum(shape.weights) >= shape.a - 1e-6
    assert 0.0 < shape.a < 1.0


def test_reach_projection_is_schur_complement(safe_designs):
    shape = safe_designs.reach
    P1, P2, P3 = shape.blocks
    expected = P1 - P2 @ np.linalg.solve(P3, P2.T)
    np.testing.assert_allclose(shape.P_x, 0.5 * (expected + expected.T), rtol=1e-6,
                               atol=1e-9 * np.abs(expected).max())
    np.testing.assert_allclose(shape.P_x, shape.P_x.T)
    assert np.linalg.eigvalsh(shape.P_x)[0] > 0


def test_reach_lmi_holds_at_solution(safe_designs, models, platoon_cfg):
    dm, em = models
    shape = safe_designs.reach
    closed = build_closed_loop(dm, em, safe_designs.estimator)
    Pi = safe_designs.monitor.Pi
    s = reach_scaling(closed, Pi, platoon_cfg.bounds)
    problem = reach_problem(closed, Pi, platoon_cfg.bounds, shape.a, s)
    values = {"P": shape.P_zeta * np.outer(s, s),
              **{f"a{i + 1}": w for i, w in enumerate(shape.weights)}}
    assert problem.lmis[0].violation(values) <= COARSE.feas_tol + 1e-12


def test_reach_shape_synthesizes_on_nominal_gains(example2_safe, models):
    dm, em = models
    cfg = example2_safe.platoon
    est = synth_estimator(em, COARSE)
    mon = synth_monitor(em, est, cfg.wbar2, cfg.wbar3, COARSE)
    closed = build_closed_loop(dm, em, est)
    shape = synth_reach_shape(closed, mon, cfg.bounds, COARSE)
    assert shape.solver in ("CLARABEL", "SCS")
    assert shape.max_violation <= COARSE.feas_tol
    assert np.linalg.eigvalsh(shape.P_zeta)[0] > 0
    assert shape.objective == pytest.approx(-np.linalg.slogdet(shape.P_zeta)[1], rel=1e-6,
                                            abs=1e-6)
    assert 0.0 < shape.a < 1.0
    assert sum(shape.weights) >= shape.a - 1e-6


def test_unscaled_and_scaled_programs_agree_at_solution(safe_designs, models, platoon_cfg):
    dm, em = models
    shape = safe_designs.reach
    closed = build_closed_loop(dm, em, safe_designs.estimator)
    Pi = safe_designs.monitor.Pi
    s = reach_scaling(closed, Pi, platoon_cfg.bounds)
    assert s.shape == (10,) and (s > 0).all()
    mults = {f"a{i + 1}": w for i, w in enumerate(shape.weights)}
    plain = reach_problem(closed, Pi, platoon_cfg.bounds, shape.a).lmis[0]
    scaled = reach_problem(closed, Pi, platoon_cfg.bounds, shape.a, s).lmis[0]
    T = np.diag(np.concatenate([s, s, np.ones(19)]))
    M_plain = plain.evaluate({"P": shape.P_zeta, **mults})
    M_scaled = scaled.evaluate({"P": shape.P_zeta * np.outer(s, s), **mults})
    np.testing.assert_allclose(T @ M_plain @ T, M_scaled, rtol=1e-9,
                               atol=1e-9 * np.abs(M_scaled).max())


def test_projection_lifts_to_full_ellipsoid(safe_designs, rng):
    shape = safe_designs.reach
    for _ in range(50):
        x = rng.standard_normal(4)
        x *= math.sqrt(1.0 / float(x @ shape.P_x @ x))
        z = lift_point(shape.P_zeta, x, range(4))
        np.testing.assert_allclose(z[:4], x)
        assert float(z @ shape.P_zeta @ z) == pytest.approx(1.0, rel=1e-6)


def test_input_weight_assembly():
    Pi = np.diag([1.0, 2.0, 3.0, 4.0, 5.0])
    bounds = (100.0, 1e-4, 0.02)
    weights = (0.1, 0.2, 0.3, 0.4, 0.5)
    W = input_weights(Pi, bounds, weights)
    assert W.shape == (19, 19) == (sum(SOURCE_DIMS), sum(SOURCE_DIMS))
    np.testing.assert_allclose(np.diag(W)[:3], 0.9 / 100.0)
    assert W[3, 3] == pytest.approx(0.8 / 1e-4)
    np.testing.assert_allclose(np.diag(W)[4:9], 0.7 / 0.02)
    np.testing.assert_allclose(np.diag(W)[9:14], 0.6 / 0.02)
    np.testing.assert_allclose(W[14:, 14:], 0.5 * Pi)
    assert len(source_weights(Pi, bounds)) == 5


# Group 4 ----------------------------------------------------------------------

def test_fixed_scalar_programs_validate(models, safe_designs, platoon_cfg):
    dm, em = models
    estimator_problem(em, 0.3).validate()
    monitor_problem(em, 1.0, platoon_cfg.wbar2, platoon_cfg.wbar3).validate()
    closed = build_closed_loop(dm, em, safe_designs.estimator)
    reach_problem(closed, safe_designs.monitor.Pi, platoon_cfg.bounds, 0.5).validate()


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2])
def test_scalar_outside_open_interval_rejected(models, alpha):
    _, em = models
    with pytest.raises(SynthesisError):
        estimator_problem(em, alpha)


def test_synthesis_metadata(safe_designs):
    meta = safe_designs.meta
    assert set(meta) == {"spectral_radius", "iss_constants", "monitor_slack"}
    assert len(meta["iss_constants"]) == 3
    assert safe_designs.hold == "decoupled"
