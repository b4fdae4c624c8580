"""
Admissible noise and stealthy injection.

 Group 1: noise generators (bounds, keyed determinism)
 Group 2: per-step feasible interval
 Group 3: attack policies (random, greedy, none, infeasible fallback)
 Group 4: policy validation and the stateful attacker
"""

import numpy as np
import pytest

from platoonsec.attack import (AttackerState, AttackPolicy, NoisePolicy, StealthyAttacker,
                               feasible_interval, gen_noise, gen_stealthy_attack, keyed_rng,
                               lookahead_gain, noise_margin, sphere, uniform_ball)
from platoonsec.errors import ConfigError
from platoonsec.runtime import monitor_statistic

from conftest import hand_estimator, hand_monitor

BOUNDS = (1234.8, 1e-4, 0.02)


def quiet_state(n: int, scale: float, rng) -> AttackerState:
    return AttackerState(scale * rng.standard_normal((n, 6)), np.zeros(n),
                         np.zeros((n, 5)), np.zeros((n, 5)))


# Group 1 ----------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["uniform_ball", "boundary", "worst_corner"])
def test_noise_respects_bounds(kind):
    policy = NoisePolicy(kind, BOUNDS, seed=3)
    sample = gen_noise(policy, k=5, n_runs=2000)
    assert sample.omega_tilde.shape == (2000, 3)
    assert sample.omega_u.shape == (2000,)
    assert sample.omega_e.shape == (2000, 5)
    slack = 1 + 1e-12
    assert (np.sum(sample.omega_tilde ** 2, axis=1) <= BOUNDS[0] * slack).all()
    assert (sample.omega_u ** 2 <= BOUNDS[1] * slack).all()
    assert (np.sum(sample.omega_e ** 2, axis=1) <= BOUNDS[2] * slack).all()


@pytest.mark.parametrize("kind", ["boundary", "worst_corner"])
def test_extreme_noise_sits_on_the_bound(kind):
    sample = gen_noise(NoisePolicy(kind, BOUNDS, seed=1), k=0, n_runs=100)
    np.testing.assert_allclose(np.sum(sample.omega_tilde ** 2, axis=1), BOUNDS[0])
    np.testing.assert_allclose(sample.omega_u ** 2, BOUNDS[1])
    np.testing.assert_allclose(np.sum(sample.omega_e ** 2, axis=1), BOUNDS[2])


def test_uniform_ball_fills_the_ball(rng):
    pts = uniform_ball(rng, 20000, 3, 2.0)
    norms = np.linalg.norm(pts, axis=1)
    assert norms.max() <= 2.0
    # a uniform 3-ball puts 1/8 of its mass inside half the radius
    assert np.mean(norms <= 1.0) == pytest.approx(0.125, abs=0.01)
    np.testing.assert_allclose(np.linalg.norm(sphere(rng, 10, 5, 3.0), axis=1), 3.0)


def test_keyed_draws_are_reproducible():
    policy = NoisePolicy("uniform_ball", BOUNDS, seed=11)
    a = gen_noise(policy, k=7, n_runs=10, batch=2)
    b = gen_noise(policy, k=7, n_runs=10, batch=2)
    c = gen_noise(policy, k=7, n_runs=10, batch=3)
    np.testing.assert_array_equal(a.omega_e, b.omega_e)
    assert not np.array_equal(a.omega_e, c.omega_e)
    single = gen_noise(policy, k=7)
    assert single.omega_tilde.shape == (3,)
    assert np.ndim(single.omega_u) == 0
    assert keyed_rng(1, 0, 0, 5).random() == keyed_rng(1, 0, 0, 5).random()
    assert keyed_rng(1, 0, 0, 5).random() != keyed_rng(1, 0, 1, 5).random()


@pytest.mark.parametrize("bounds", [(0.0, 1e-4, 0.02), (1.0, -1.0, 0.02), (1.0, 1.0)])
def test_noise_bounds_must_be_positive(bounds):
    with pytest.raises(ConfigError):
        NoisePolicy("uniform_ball", bounds)


def test_unknown_noise_kind():
    with pytest.raises(ConfigError):
        NoisePolicy("gaussian", BOUNDS)


# Group 2 ----------------------------------------------------------------------

def test_feasible_interval_closed_form():
    mon = hand_monitor(1.0)
    v = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
    base = np.array([[0.5, 0.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0, 0.0]])
    lo, hi, feasible, best = feasible_interval(mon, v, base, 1.0)
    assert lo[0] == pytest.approx(-0.5)
    assert hi[0] == pytest.approx(1.5)
    assert best[0] == pytest.approx(0.5)
    assert feasible.tolist() == [True, False]
    assert best[1] == pytest.approx(0.0)


# Group 3 ----------------------------------------------------------------------

def test_random_attack_stays_inside_margin(models, rng):
    dm, em = models
    est, mon = hand_estimator(), hand_monitor(10.0)
    policy = AttackPolicy("random_stealthy", margin=0.8, seed=4)
    state = quiet_state(500, 1e-3, rng)
    out = gen_stealthy_attack(policy, mon, est, em, state, k=3, dm=dm)
    assert out.feasible.all()
    e_next = state.e @ est.error_matrix(em).T
    predicted = e_next @ em.CeAe.T - out.delta[:, None] * em.attack_direction
    assert (monitor_statistic(mon, predicted) <= 0.8 * (1 + 1e-9)).all()
    assert np.ptp(out.delta) > 0


def test_greedy_attack_pushes_towards_target(models, rng):
    dm, em = models
    est, mon = hand_estimator(), hand_monitor(10.0)
    gain = lookahead_gain(dm, 20)
    state = quiet_state(5, 1e-3, rng)
    forward = AttackPolicy("greedy_direction", target_direction=tuple(gain))
    backward = AttackPolicy("greedy_direction", target_direction=tuple(-gain))
    up = gen_stealthy_attack(forward, mon, est, em, state, 0, dm)
    down = gen_stealthy_attack(backward, mon, est, em, state, 0, dm)
    e_next = state.e @ est.error_matrix(em).T
    lo, hi, _, _ = feasible_interval(mon, em.attack_direction, e_next @ em.CeAe.T, 0.8)
    np.testing.assert_allclose(up.delta, hi)
    np.testing.assert_allclose(down.delta, lo)


def test_greedy_attack_needs_follower_model(models, rng):
    _, em = models
    policy = AttackPolicy("greedy_direction", target_direction=(0.0, 1.0, 0.0, 0.0))
    with pytest.raises(ConfigError):
        gen_stealthy_attack(policy, hand_monitor(), hand_estimator(), em,
                            quiet_state(2, 1e-3, rng), 0)


def test_no_attack_is_zero(models, rng):
    _, em = models
    out = gen_stealthy_attack(AttackPolicy(), hand_monitor(), hand_estimator(), em,
                              quiet_state(4, 1.0, rng), 0)
    np.testing.assert_array_equal(out.delta, 0.0)
    assert out.feasible.all()


def test_infeasible_step_falls_back_to_minimizer(models, rng):
    dm, em = models
    est, mon = hand_estimator(), hand_monitor(10.0)
    state = AttackerState(np.zeros((1, 6)), np.zeros(1), np.zeros((1, 5)),
                          np.array([[3.0, -3.0, 3.0, -3.0, 3.0]]))
    out = gen_stealthy_attack(AttackPolicy("random_stealthy"), mon, est, em, state, 0, dm)
    assert not out.feasible[0]
    _, _, _, best = feasible_interval(mon, em.attack_direction, state.w_e2, 0.8)
    assert out.delta[0] == pytest.approx(best[0])


# Group 4 ----------------------------------------------------------------------

@pytest.mark.parametrize("kwargs", [
    {"kind": "flood"},
    {"margin": 0.0},
    {"margin": 1.5},
    {"knowledge": "psychic"},
    {"lookahead": 0},
    {"kind": "greedy_direction"},
    {"kind": "greedy_direction", "target_direction": (0.0, 0.0, 0.0, 0.0)},
    {"kind": "greedy_direction", "target_direction": (1.0, 0.0)},
])
def test_attack_policy_validation(kwargs):
    with pytest.raises(ConfigError):
        AttackPolicy(**kwargs)


def test_robust_attacker_shrinks_target(models):
    dm, em = models
    est, mon = hand_estimator(), hand_monitor(10.0)
    policy = AttackPolicy("random_stealthy", margin=0.8, knowledge="robust")
    attacker = StealthyAttacker(policy, mon, est, em, dm, BOUNDS)
    rho = noise_margin(mon, est, em, BOUNDS)
    assert rho > 0
    assert attacker.level == pytest.approx(max(np.sqrt(0.8) - rho, 0.0) ** 2)
    assert attacker.level < 0.8


def test_nominal_attacker_tracks_its_own_error_copy(models, rng):
    dm, em = models
    est, mon = hand_estimator(), hand_monitor(10.0)
    policy = AttackPolicy("random_stealthy", knowledge="nominal", seed=9)
    attacker = StealthyAttacker(policy, mon, est, em, dm, BOUNDS)
    n = 3
    attacker.reset(np.zeros((n, 6)))
    expected = np.zeros((n, 6))
    Abar = est.error_matrix(em)
    for k in range(5):
        noise = rng.standard_normal((n, 5))
        out = attacker.step(k, rng.standard_normal((n, 6)), rng.standard_normal(n), noise, noise)
        expected = expected @ Abar.T - out.delta[:, None] * em.Be1[:, 0]
        np.testing.assert_allclose(attacker.e_copy, expected)
    assert np.any(attacker.e_copy)
