import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from periodic_engine import _rk
from periodic_engine import profiles as pr
from periodic_engine import synthesis as sy
from periodic_engine.dynamics import (CovarianceState, find_periodic_orbit, integrate_full, integrate_reduced,
                                      jump_matrix, orbit_residual, state_energy)
from periodic_engine.errors import ConfigError, NoConvergence


def flat(T=2.0, q0=1e4, **kw):
    params = sy.EngineParams(q0=q0, **kw)
    profile = pr.constant(T)
    return profile, sy.max_power_protocol(profile, params), params


# ---------------------------------------------------------------------------
# integrator


def test_dormand_prince_order_conditions():
    c, B = np.asarray(_rk.C), np.asarray(_rk.B)
    for k in range(5):
        assert np.dot(B, c[: len(B)] ** k) == pytest.approx(1.0 / (k + 1), rel=1e-14)
    for i, row in enumerate(_rk.A):
        assert np.sum(row) == pytest.approx(c[i], abs=1e-14)
    assert np.sum(_rk.E) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("lam", [-3.0, 0.5, -40.0])
def test_integrate_linear_scalar(lam):
    coeffs = lambda t: (np.full((len(t), 1, 1), lam), np.zeros((len(t), 1)))
    steps, Y, _ = _rk.integrate_linear(coeffs, 0.0, 1.0, np.ones((1, 1)), rtol=1e-10, atol=1e-14)
    assert Y[0, 0] == pytest.approx(math.exp(lam), rel=1e-9)


def test_tolerance_proportionality():
    profile, proto, params = flat(T=2.0, gamma=3.0)
    errs = []
    for rtol in (1e-5, 1e-7, 1e-9):
        traj = integrate_reduced(profile, proto, params, 10.0, rtol=rtol, atol=1e-3 * rtol)
        errs.append(abs(traj.final_state[0] - (2.0 + 8.0 * math.exp(-3.0))))
    assert errs[0] > errs[1] > errs[2] or errs[2] < 1e-13
    assert all(e <= 10 * r * 10.0 for e, r in zip(errs, (1e-5, 1e-7, 1e-9)))


# ---------------------------------------------------------------------------
# reduced model


def test_reduced_equilibrium_is_fixed():
    profile, proto, params = flat(T=2.0, m=2.0, k_B=3.0)
    traj = integrate_reduced(profile, proto, params, 3.0)
    assert traj.evaluate(np.linspace(0, 1, 11))[:, 0] == pytest.approx(np.full(11, 3.0), rel=1e-12)


def test_reduced_relaxation_half_life():
    params = sy.EngineParams(gamma=0.7, m=1.3, t_f=1.0)
    profile = pr.constant(2.0)
    proto = sy.max_power_protocol(profile, params)
    eq = params.k_B * 2.0 / params.m
    traj = integrate_reduced(profile, proto, params, eq + 1.0, n_cycles=3)
    t = np.linspace(0, 3, 301)
    exact = eq + np.exp(-params.gamma * t / params.m)
    assert traj.evaluate(t)[:, 0] == pytest.approx(exact, rel=1e-8)
    # bisect the dense output for the half-life
    lo, hi = 0.0, 3.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if traj.evaluate(mid)[0, 0] - eq > 0.5 else (lo, mid)
    assert 0.5 * (lo + hi) == pytest.approx(params.m * math.log(2) / params.gamma, rel=1e-6)


def test_reduced_jump_scaling_against_segments(carnot41, unit_params):
    proto = sy.max_power_protocol(carnot41, unit_params)
    whole = integrate_reduced(carnot41, proto, unit_params, 3.0)
    left = whole.evaluate(0.5, side="left")[0, 0]
    right = whole.evaluate(0.5, side="right")[0, 0]
    assert right == pytest.approx(left * math.sqrt(0.25), rel=1e-14)
    (jump,) = [j for j in whole.jumps if j.t == 0.5]
    assert jump.q_after / jump.q_before == pytest.approx(0.25, rel=1e-12)
    second = integrate_reduced(carnot41, proto, unit_params, left * 0.5, t0=0.5)
    t = np.linspace(0.55, 0.99, 12)
    assert second.evaluate(t)[:, 0] == pytest.approx(whole.evaluate(t)[:, 0], rel=1e-8)
    assert second.t_end == 1.5


def test_reduced_orbit_matches_max_power_sigma(carnot41, unit_params):
    proto = sy.max_power_protocol(carnot41, unit_params)
    orbit = find_periodic_orbit("reduced", carnot41, proto, unit_params)
    assert orbit.residual <= 1e-9
    assert orbit.state0[0] == pytest.approx(3.0, rel=1e-8)


@pytest.mark.parametrize("gamma", [0.3, 10.0])
def test_newton_and_fixed_point_agree(sine, gamma):
    params = sy.EngineParams(gamma=gamma)
    proto = sy.max_power_protocol(sine, params)
    a = find_periodic_orbit("reduced", sine, proto, params, method="newton")
    b = find_periodic_orbit("reduced", sine, proto, params, method="fixed_point")
    assert a.state0 == pytest.approx(b.state0, rel=1e-8)
    if gamma * params.t_f / params.m >= 10:
        assert b.iterations < 20
    assert a.iterations <= 4


def test_orbit_cycle_cap_raises(sine):
    params = sy.EngineParams(gamma=0.01)
    proto = sy.max_power_protocol(sine, params)
    with pytest.raises(NoConvergence):
        find_periodic_orbit("reduced", sine, proto, params, method="fixed_point", max_cycles=5)


def test_orbit_residual_norm():
    assert orbit_residual([1.0], [1.5]) == pytest.approx(0.5)
    # the cross term is measured against sqrt(Sigma_x Sigma_v)
    assert orbit_residual([1e-4, 0.0, 1.0], [1e-4, 1e-6, 1.0]) == pytest.approx(1e-4)


# ---------------------------------------------------------------------------
# full model


def test_full_equilibrium_is_fixed():
    profile, proto, params = flat(T=1.5, m=2.0, gamma=0.5, q0=50.0)
    eq = CovarianceState.equilibrium(1.5, 50.0, params)
    traj = integrate_full(profile, proto, params, eq)
    assert np.max(np.abs(traj.final_state - eq.as_array()) / np.array([eq.sigma_x, eq.sigma_x, eq.sigma_v])) < 1e-10


def test_full_matches_matrix_exponential_and_decay_rate():
    gamma, m, q, T = 0.8, 1.0, 30.0, 2.0
    profile, proto, params = flat(T=T, m=m, gamma=gamma, q0=q)
    eq = CovarianceState.equilibrium(T, q, params).as_array()
    dev0 = np.array([0.05, 0.02, -0.3])
    traj = integrate_full(profile, proto, params, eq + dev0, n_cycles=2)
    A = np.array([[0, 2, 0], [-q / m, -gamma / m, 1], [0, -2 * q / m, -2 * gamma / m]])
    lam, V = np.linalg.eig(A)
    coef = np.linalg.solve(V, dev0)
    for t in (0.13, 0.77, 1.6):
        exact = (V @ (coef * np.exp(lam * t))).real
        assert traj.evaluate(t)[0] - eq == pytest.approx(exact, rel=1e-7, abs=1e-10)
    assert lam.real == pytest.approx(np.full(3, -gamma / m), rel=1e-10)
    # after one full turn of the rotating pair the deviation is shrunk by exp(-gamma t / m)
    turn = math.pi / math.sqrt(q / m - gamma ** 2 / (4 * m ** 2))
    dev = traj.evaluate(turn)[0] - eq
    assert dev == pytest.approx(dev0 * math.exp(-gamma * turn / m), rel=1e-4, abs=1e-12)


def test_jump_matrices():
    assert jump_matrix("reduced", 4.0)[0, 0] == 2.0
    assert np.array_equal(jump_matrix("full", 4.0, "sudden"), np.eye(3))
    assert np.allclose(jump_matrix("full", 4.0, "adiabatic"), np.diag([0.5, 1.0, 2.0]))
    with pytest.raises(ConfigError):
        jump_matrix("full", 4.0, "instant")


@pytest.mark.parametrize("rule", ["sudden", "adiabatic"])
def test_full_jump_rules_in_trajectory(carnot41, rule):
    params = sy.EngineParams(q0=100.0)
    proto = sy.max_power_protocol(carnot41, params)
    traj = integrate_full(carnot41, proto, params, CovarianceState.equilibrium(4.0, 100.0, params), jump_rule=rule)
    for j in traj.jumps:
        assert j.after == pytest.approx(jump_matrix("full", j.q_after / j.q_before, rule) @ j.before, rel=1e-14)
    mid = [j for j in traj.jumps if j.t == 0.5][0]
    assert traj.evaluate(0.5, side="left")[0] == pytest.approx(mid.before, rel=1e-12)
    assert traj.evaluate(0.5, side="right")[0] == pytest.approx(mid.after, rel=1e-12)


def test_sudden_carnot_has_no_periodic_state(carnot41, unit_params):
    proto = sy.max_power_protocol(carnot41, unit_params)
    with pytest.raises(NoConvergence, match="spectral radius"):
        find_periodic_orbit("full", carnot41, proto, unit_params, jump_rule="sudden")


@given(st.floats(0.2, 5.0), st.floats(-0.9, 0.9), st.floats(0.2, 5.0))
@settings(max_examples=10, deadline=None)
def test_full_positive_definite(sx, corr, sv):
    profile = pr.sinusoid(2.5, 1.5)
    params = sy.EngineParams(q0=400.0, gamma=2.0)
    proto = sy.max_power_protocol(profile, params)
    sx = sx * 1e-2
    state = CovarianceState(sx, corr * math.sqrt(sx * sv), sv)
    traj = integrate_full(profile, proto, params, state)
    _, Y = traj.nodes()
    assert np.all(Y[:, 0] > 0) and np.all(Y[:, 2] > 0)
    assert np.all(Y[:, 0] * Y[:, 2] - Y[:, 1] ** 2 > 0)


@pytest.mark.parametrize("rule", ["sudden", "adiabatic"])
def test_energy_bookkeeping(carnot41, rule):
    params = sy.EngineParams(q0=400.0, gamma=2.0)
    proto = sy.max_power_protocol(carnot41, params)
    state = CovarianceState.equilibrium(4.0, 400.0, params)
    traj = integrate_full(carnot41, proto, params, state, jump_rule=rule)
    m, g, kB = params.m, params.gamma, params.k_B

    def rate(t, Y):
        q, qdot, T = proto(t), proto.rate(t), carnot41(t)
        return 0.5 * qdot * Y[:, 0] + g * (kB * T / m - Y[:, 2])

    jumps = sum(state_energy("full", j.after, j.q_after, m)[0] - state_energy("full", j.before, j.q_before, m)[0]
                for j in traj.jumps)
    E0 = state_energy("full", traj.initial_state, proto(0.0), m)[0]
    E1 = state_energy("full", traj.final_state, proto(1.0), m)[0]
    assert E1 - E0 == pytest.approx(traj.integrate(rate) + jumps, abs=10 * 1e-9 * E0)


def test_low_friction_equipartition_and_reduction(sine):
    params = sy.EngineParams(gamma=0.1, q0=1e4)
    assert params.friction_ratio == pytest.approx(1e-3)
    proto = sy.max_power_protocol(sine, params)
    full = find_periodic_orbit("full", sine, proto, params)
    _, resid = full.trajectory.equipartition_residual()
    assert np.max(resid) < 0.02
    red = find_periodic_orbit("reduced", sine, proto, params)
    t = np.linspace(0, 1, 41)
    ratio = full.trajectory.evaluate(t)[:, 2] / red.trajectory.evaluate(t)[:, 0]
    assert np.max(np.abs(ratio - 1)) < 0.02


def test_equipartition_breaks_at_high_friction(sine):
    params = sy.EngineParams(gamma=10.0, q0=100.0)
    proto = sy.max_power_protocol(sine, params)
    full = find_periodic_orbit("full", sine, proto, params)
    _, resid = full.trajectory.equipartition_residual()
    assert np.max(resid) > 0.05


def test_trajectory_interface(sine, unit_params):
    proto = sy.max_power_protocol(sine, unit_params)
    traj = integrate_reduced(sine, proto, unit_params, 2.0, n_cycles=2)
    assert traj.t_end == 2.0
    with pytest.raises(ValueError):
        traj.evaluate(2.5)
    with pytest.raises(ValueError):
        traj.equipartition_residual()
    tab = traj.table(11)
    assert tab.shape == (11, 6)
    assert tab[:, 1] == pytest.approx(unit_params.m * tab[:, 3] / tab[:, 4])
    assert traj.integrate(lambda t, Y: np.ones_like(t)) == pytest.approx(2.0, rel=1e-14)
    assert traj.integrate(lambda t, Y: t, 0.5, 1.5) == pytest.approx(1.0, rel=1e-13)


def test_covariance_state_helpers():
    s = CovarianceState(2.0, 0.5, 3.0)
    assert s.determinant == pytest.approx(5.75)
    assert s.is_positive_definite()
    assert not CovarianceState(1.0, 2.0, 1.0).is_positive_definite()
    assert CovarianceState.from_array(s.as_array()) == s
    assert s.energy(4.0, 2.0) == pytest.approx(4.0 + 3.0)
