"""End-to-end acceptance checks, one test per criterion, each printing a PASS/FAIL line."""

import math
import time

import cvxpy as cp
import numpy as np
import pytest

from periodic_engine import montecarlo as mc
from periodic_engine import profiles as pr
from periodic_engine import synthesis as sy
from periodic_engine.cli import sweep_point, tradeoff_curve
from periodic_engine.dynamics import CovarianceState, find_periodic_orbit
from periodic_engine.energetics import cycle_power, cycle_uptake_and_efficiency

from conftest import random_profile

UNIT = sy.EngineParams()


def reduced_ledger(profile, params, P=None):
    proto = sy.max_power_protocol(profile, params) if P is None else sy.fixed_power_protocol(profile, params, P)
    orbit = find_periodic_orbit("reduced", profile, proto, params)
    return cycle_uptake_and_efficiency(orbit.trajectory)


def test_criterion_01_max_power_carnot(acceptance):
    start = time.perf_counter()
    p = pr.carnot(4.0, 1.0)
    analytic = sy.max_power_value(p, UNIT)
    proto = sy.max_power_protocol(p, UNIT)
    orbit = find_periodic_orbit("reduced", p, proto, UNIT)
    measured = float(cycle_power(orbit.trajectory))
    elapsed = time.perf_counter() - start
    closed = UNIT.gamma * UNIT.k_B / UNIT.m * (2.0 - 1.0) ** 2 / 4
    err = abs(measured / analytic - 1)
    ok = abs(analytic - 0.25) < 1e-14 and closed == 0.25 and err < 1e-6 and elapsed < 1.0
    assert acceptance(1, ok, f"P*={analytic:.12g}, periodic-orbit P={measured:.12g} (rel err {err:.1e}), "
                             f"{elapsed:.2f} s")


def test_criterion_02_curzon_ahlborn(acceptance):
    led = reduced_ledger(pr.carnot(4.0, 1.0), UNIT)
    target = 1 - math.sqrt(1.0 / 4.0)
    ok = led.eta_Q is not None and abs(led.eta_Q - target) < 1e-6
    assert acceptance(2, ok, f"eta_Q={led.eta_Q:.10f} vs 1-sqrt(Tc/Th)={target}")


def test_criterion_03_efficiency_at_max_power(acceptance):
    etas = {}
    for name, prof in (("carnot(4,1)", pr.carnot(4.0, 1.0)), ("sqrt_sinusoid(1.5,0.5)", pr.sqrt_sinusoid(1.5, 0.5))):
        assert abs(pr.moments(prof).mu3_sqrtT) < 1e-12
        etas[name] = reduced_ledger(prof, UNIT).eta_U
    worst = 0.0
    for seed in range(20):
        m = pr.moments(random_profile(np.random.default_rng(seed)))
        via_cov = m.mean_sqrtT * m.var_sqrtT / m.cov_T_sqrtT
        via_mu3 = 1 / (2 + m.mu3_sqrtT / (m.var_sqrtT * m.mean_sqrtT))
        worst = max(worst, abs(via_cov - via_mu3) / abs(via_mu3))
    ok = all(abs(e - 0.5) < 1e-6 for e in etas.values()) and worst < 1e-10
    detail = ", ".join(f"eta_U[{k}]={v:.9f}" for k, v in etas.items())
    assert acceptance(3, ok, f"{detail}; cov vs mu3 forms on 20 random profiles: max rel diff {worst:.1e}")


def test_criterion_04_tradeoff_curves(acceptance):
    profiles = {
        "carnot(4,1)": pr.carnot(4.0, 1.0),
        "sinusoid(2.5,1.5)": pr.sinusoid(2.5, 1.5),
        "sampled ramp": pr.sampled([0.0, 0.3, 0.6], [1.0, 3.5, 2.0], 1.0),
    }
    start = time.perf_counter()
    checks = []
    for name, prof in profiles.items():
        p_star, rows = tradeoff_curve(prof, UNIT, 50)
        eta = [r[2] for r in rows]
        monotone = all(b <= a for a, b in zip(eta, eta[1:]))
        low = sy.max_efficiency_at_power(prof, UNIT, 1e-6 * p_star)
        end_err = abs(eta[-1] - sy.efficiency_at_max_power(prof))
        checks.append((name, monotone, low, end_err))
    elapsed = time.perf_counter() - start
    ok = all(m and low > 0.999 and e < 1e-4 for _, m, low, e in checks) and elapsed < 10.0
    detail = "; ".join(f"{n}: monotone={m}, eta(1e-6 P*)={low:.7f}, endpoint err {e:.1e}" for n, m, low, e in checks)
    assert acceptance(4, ok, f"{detail}; {elapsed:.2f} s")


def test_criterion_05_constraints(acceptance):
    params = sy.EngineParams(gamma=0.7, m=1.3, k_B=0.9)
    profiles = [pr.carnot(4.0, 1.0), pr.sinusoid(2.5, 1.5), pr.sqrt_sinusoid(1.5, 0.5)]
    profiles += [random_profile(np.random.default_rng(100 + s)) for s in range(10)]
    worst_c = worst_p = 0.0
    target = params.m * params.t_f / params.k_B
    for prof in profiles:
        p_star = sy.max_power_value(prof, params)
        sigmas = [(None, sy.max_power_sigma(prof, params))]
        sigmas += [(f * p_star, sy.fixed_power_sigma(prof, params, f * p_star)) for f in (0.0, 0.25, 0.5, 0.9, 0.999)]
        for P, s in sigmas:
            c = s.integral(lambda T, S: T / S)
            worst_c = max(worst_c, abs(c / target - 1))
            if P is not None:
                drive = pr.integrate_functional(prof, lambda T: params.k_B * T / params.m)
                power = params.gamma / params.t_f * (drive - s.integral(lambda T, S: S))
                worst_p = max(worst_p, abs(power - P) / p_star)
    ok = worst_c < 1e-9 and worst_p < 1e-9
    assert acceptance(5, ok, f"{len(profiles)} profiles x 6 trajectories: periodicity constraint max rel err "
                             f"{worst_c:.1e}, power constraint max err {worst_p:.1e} (in units of P*)")


def test_criterion_06_friction_sweep(acceptance):
    ratios = np.logspace(-3.0, 0.0, 7)
    base = sy.EngineParams(q0=1e4)
    start = time.perf_counter()
    rows = [sweep_point(r, pr.sinusoid(2.5, 1.5), base.with_(gamma=r * math.sqrt(base.m * base.q0)),
                        "low_friction_optimal", "adiabatic") for r in ratios]
    elapsed = time.perf_counter() - start
    ok_status = all(r["status"] == "ok" for r in rows)
    pr_ = [r.get("power_ratio", float("nan")) for r in rows]
    monotone = all(b <= a * 1.02 for a, b in zip(pr_, pr_[1:]))
    equi = rows[0].get("equipartition_max", float("inf"))
    ok = ok_status and pr_[0] >= 0.95 and monotone and equi < 0.02 and elapsed < 60.0
    # the two-level cycle with the adiabatic switching rule, same regime
    carnot_rows = [sweep_point(r, pr.carnot(4.0, 1.0), base.with_(gamma=r * math.sqrt(base.m * base.q0)),
                               "low_friction_optimal", "adiabatic") for r in (1e-3, 1e-2, 1e-1)]
    cr = [r.get("power_ratio", float("nan")) for r in carnot_rows]
    ok = ok and cr[0] >= 0.95 and all(b <= a * 1.02 for a, b in zip(cr, cr[1:]))
    assert acceptance(6, ok, "sinusoid P/P* over gamma/sqrt(m q0) in [1e-3, 1]: "
                             + ", ".join(f"{x:.4f}" for x in pr_)
                             + f"; equipartition residual {equi:.4f}; {elapsed:.1f} s; carnot(adiabatic) "
                             + ", ".join(f"{x:.4f}" for x in cr))


def test_criterion_07_linear_response_comparison(acceptance):
    params = sy.EngineParams(gamma=0.1, q0=1e4)
    mean = 2.5
    out = {}
    for label, rel in (("dT/T=0.05", 0.05), ("Th/Tc=4", 0.6)):
        prof = pr.sinusoid(mean, rel * mean)
        opt = sweep_point(rel, prof, params, "low_friction_optimal", "adiabatic")
        lin = sweep_point(rel, prof, params, "linear_response", "adiabatic")
        out[label] = (opt["power"], lin["power"])
    small_opt, small_lin = out["dT/T=0.05"]
    big_opt, big_lin = out["Th/Tc=4"]
    ok = abs(small_opt / small_lin - 1) < 0.01 and big_opt > big_lin
    assert acceptance(7, ok, f"dT/T=0.05: optimal {small_opt:.6e} vs linear response {small_lin:.6e} "
                             f"(rel diff {abs(small_opt / small_lin - 1):.1e}); Th/Tc=4: optimal {big_opt:.6e} "
                             f"> linear response {big_lin:.6e}")


def test_criterion_08_linear_response_limits(acceptance):
    a, mean = 1e-3, 2.0
    prof = pr.sinusoid(mean, a * mean)
    params = sy.EngineParams(gamma=1e-3, q0=1.0)
    p_star = sy.max_power_value(prof, params)
    lr_power = params.gamma * params.k_B / (8 * params.m) * (a * mean) ** 2 / mean
    p_err = abs(p_star / lr_power - 1)
    t = np.linspace(0.0, 1.0, 1001)
    shape = sy.max_power_protocol(prof, params)(t) / params.q0
    lr_shape = (1 + a * np.cos(2 * np.pi * t)) / (1 + a)
    q_err = float(np.max(np.abs(shape / lr_shape - 1)))
    ok = p_err < 1e-5 and q_err < 1e-5
    assert acceptance(8, ok, f"P* vs linear-response formula rel err {p_err:.1e}; q*(t)/q*(0) vs "
                             f"(1+a cos wt)/(1+a) sup rel err {q_err:.1e} at a=1e-3")


def test_criterion_09_monte_carlo(acceptance):
    prof = pr.carnot(4.0, 1.0)
    params = sy.EngineParams(q0=1e4)
    proto = sy.max_power_protocol(prof, params)
    orbit = find_periodic_orbit("full", prof, proto, params, jump_rule="adiabatic")
    cfg = mc.McConfig(n_particles=100_000, dt=1e-4, seed=0, jump_rule="adiabatic")
    start = time.perf_counter()
    stats = mc.simulate(prof, proto, params, cfg, CovarianceState.from_array(orbit.state0))
    elapsed = time.perf_counter() - start
    again = mc.simulate(prof, proto, params, cfg, CovarianceState.from_array(orbit.state0))
    ode = orbit.trajectory.evaluate(stats.times)
    z = np.abs(stats.sigma_v - ode[:, 2]) / stats.se_v
    reduced_power = float(cycle_power(find_periodic_orbit("reduced", prof, proto, params).trajectory))
    z_power = abs(stats.power - reduced_power) / stats.power_se
    identical = stats.table().tobytes() == again.table().tobytes() and stats.summary() == again.summary()
    ok = np.max(z) < 3 and z_power < 3 and identical and elapsed < 120.0
    assert acceptance(9, ok, f"max |z| of Sigma_v over {len(z)} nodes {np.max(z):.2f}; power "
                             f"{stats.power:.5f} +- {stats.power_se:.5f} vs reduced {reduced_power:.5f} "
                             f"(|z| {z_power:.2f}); rerun byte-identical={identical}; {elapsed:.1f} s")


def discrete_mu_scan(profile, params, P, n=1000):
    """Root of the discretised multiplier equation by bracketing scan and bisection."""
    t = (np.arange(n) + 0.5) / n * profile.period
    T = profile(t)
    kP = params.kappa * P

    def F(mu):
        A = np.mean(np.sqrt(T * T + mu * T))
        C = np.mean(T / np.sqrt(T * T + mu * T))
        return A * C - (np.mean(T) - kP)

    grid = np.concatenate([[0.0], np.logspace(-3, 8, 2000)])
    vals = np.array([F(m) for m in grid])
    k = int(np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0][0])
    lo, hi = grid[k], grid[k + 1]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if np.sign(F(mid)) == np.sign(F(lo)) else (lo, mid)
    mu = 0.5 * (lo + hi)
    A = np.mean(np.sqrt(T * T + mu * T))
    C = np.mean(T * T / np.sqrt(T * T + mu * T))
    return mu, kP / (A * C / (np.mean(T) - kP) - np.mean(T))


def discrete_convex_program(profile, params, P, n=1000):
    """Minimise uptake over 1000 bins of Sigma_v with cvxpy; returns the fitted mu and the efficiency."""
    t = (np.arange(n) + 0.5) / n * profile.period
    T = profile(t)
    w = np.full(n, profile.period / n)
    kB, m, g, tf = params.k_B, params.m, params.gamma, params.t_f
    S = cp.Variable(n, pos=True)
    budget = np.sum(w * kB * T / m) - P * tf / g
    prob = cp.Problem(cp.Minimize(cp.sum(cp.multiply(w * T ** 2, cp.inv_pos(S)))),
                      [cp.sum(cp.multiply(w * T, cp.inv_pos(S))) <= m * tf / kB, cp.sum(cp.multiply(w, S)) == budget])
    prob.solve()
    Sv = S.value
    U = kB ** 2 * g / m ** 2 * np.sum(w * T ** 2 / Sv) - kB * g / m * np.sum(w * T)
    # optimum has lambda Sigma^2 = T^2 + mu T, i.e. Sigma^2/T is affine in T
    slope, intercept = np.polyfit(T, Sv ** 2 / T, 1)
    return intercept / slope, P * tf / U


def test_criterion_10_oracles(acceptance):
    details, ok = [], True
    for name, prof in (("sinusoid(2.5,1.5)", pr.sinusoid(2.5, 1.5)), ("carnot(4,1)", pr.carnot(4.0, 1.0))):
        P = 0.5 * sy.max_power_value(prof, UNIT)
        mu, eta = sy.solve_mu(prof, UNIT, P), sy.max_efficiency_at_power(prof, UNIT, P)
        mu_scan, eta_scan = discrete_mu_scan(prof, UNIT, P)
        mu_cvx, eta_cvx = discrete_convex_program(prof, UNIT, P)
        errs = [abs(mu_scan / mu - 1), abs(eta_scan / eta - 1), abs(mu_cvx / mu - 1), abs(eta_cvx / eta - 1)]
        ok = ok and max(errs) < 1e-4
        details.append(f"{name}: mu={mu:.6f} (scan {errs[0]:.1e}, cvxpy {errs[2]:.1e}), eta={eta:.6f} "
                       f"(scan {errs[1]:.1e}, cvxpy {errs[3]:.1e})")
    assert acceptance(10, ok, "; ".join(details))
