"""
End-to-end reproductions on the bundled scenarios with the full scalar grids.

These take minutes; run them with ``pytest -m slow``.
"""

import dataclasses

import numpy as np
import pytest

from platoonsec.attack import AttackPolicy
from platoonsec.reach import assess_risk
from platoonsec.sim import project_monitor_ellipse, run_scenario
from platoonsec.synth import build_models, synthesize_all

pytestmark = pytest.mark.slow

# estimator gain of the nominal design, rounded to four digits
REFERENCE_L = np.array([
    [0.1023, -0.0002, 0.0082, 0.0261, 0.0057],
    [-0.0002, 0.1126, 0.0030, 0.0031, -0.0000],
    [0.0082, 0.0030, 0.0429, 0.0354, -0.0034],
    [0.0261, 0.0031, 0.0354, 0.0331, -0.0021],
    [0.0057, -0.0000, -0.0034, -0.0021, 0.1081],
    [-0.0031, -0.0017, 0.0017, 0.0003, 0.0108],
])


def full_designs(config):
    return synthesize_all(config.platoon, config.hold, config.synthesis, config.design_hash)


@pytest.fixture(scope="module")
def nominal(example1):
    return full_designs(example1)


@pytest.fixture(scope="module")
def safe(example2_safe):
    return full_designs(example2_safe)


@pytest.fixture(scope="module")
def risky(example2_risky):
    return full_designs(example2_risky)


def test_iss_gain_and_stability(example1, nominal):
    _, em = build_models(example1.platoon, example1.hold)
    assert 0.96 <= nominal.estimator.gamma <= 1.18
    assert nominal.estimator.spectral_radius(em) < 1.0


def test_estimator_gain_close_to_reference(nominal):
    np.testing.assert_allclose(nominal.estimator.L, REFERENCE_L, atol=0.05)


def test_dissipation_holds_on_random_samples(example1, nominal, rng):
    _, em = build_models(example1.platoon, example1.hold)
    est = nominal.estimator
    for _ in range(1000):
        e = rng.standard_normal(6) * rng.uniform(0.01, 10.0)
        w_u = rng.uniform(-1.0, 1.0)
        w_e = rng.standard_normal(5)
        scale = 1.0 + float(e @ est.P_lyap @ e) + w_u ** 2 + float(w_e @ w_e)
        assert est.dissipation_gap(em, e, w_u, w_e) <= example1.synthesis.feas_tol * scale


def test_attack_free_monitor_rarely_fires(example2_safe, safe):
    s = dataclasses.replace(example2_safe.scenario, attacks=(AttackPolicy(),), horizon=400)
    log = run_scenario(s, safe, trace_runs=2000)
    assert log.summary.runs == 10000
    assert log.summary.alarm_rate <= 1e-3

    Q = project_monitor_ellipse(safe.monitor, (0, 1))
    r = log.residual_scatter((0, 1), burn_in=s.burn_in).to_numpy()
    inside = np.einsum("ni,ij,nj->n", r, Q, r) <= 1.0
    assert inside.mean() >= 0.999


@pytest.mark.parametrize("kind", ["random_stealthy", "greedy_direction"])
def test_stealthy_runs_stay_in_reach_ellipsoids(example2_safe, safe, kind):
    target = tuple(example2_safe.critical.halfspaces[0].c) if kind == "greedy_direction" \
        else None
    policy = AttackPolicy(kind, margin=0.8, target_direction=target, knowledge="oracle",
                          seed=example2_safe.scenario.seed)
    s = dataclasses.replace(example2_safe.scenario, attacks=(policy,), horizon=300)
    log = run_scenario(s, safe, trace_runs=1, shape=safe.reach)
    c = log.containment
    assert c.n[0] + c.excluded_runs == 10000
    assert c.n[0] > 0
    # each excluded run holds at least one step the attacker flagged as infeasible
    assert c.excluded_runs <= log.summary.infeasible_steps
    assert c.violations == 0
    if kind == "greedy_direction":
        assert c.max_x_level >= 0.2


def test_nominal_gains_are_risk_free(example2_safe, safe):
    a = example2_safe.assessment
    report = assess_risk(safe.reach, np.array(a.zeta1), example2_safe.critical, a.horizon,
                         a.distance_convention)
    assert report.verdict == "risk_free"
    assert (report.distances > 0).all()
    assert (report.d_inf > 0).all()


def test_aggressive_gains_reach_collision(example2_risky, risky):
    a = example2_risky.assessment
    report = assess_risk(risky.reach, np.array(a.zeta1), example2_risky.critical, a.horizon,
                         a.distance_convention)
    assert report.verdict == "at_risk"
    assert report.first_violation_k is not None
    assert report.first_violation_k <= 50
    assert "collision" in report.violated
