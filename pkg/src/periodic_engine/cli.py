"""Command-line front end.

Exit codes: 0 on success, 2 for configuration errors, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import logging
import math
import multiprocessing
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields

import numpy as np

from . import __version__
from .config import SWEEP_AXES, SWEEP_PROTOCOLS, build_params, build_profiles, load_run_file, resolve
from .dynamics import CovarianceState, find_periodic_orbit, integrate_full
from .energetics import cycle_uptake_and_efficiency, heat
from .errors import ConfigError, DegenerateProfile, NumericalError
from .montecarlo import McConfig, equipartition_diagnostic, simulate
from .output import Writer
from .profiles import Sinusoid, carnot, sinusoid
from .synthesis import (
    LinearResponseProtocol,
    drive_ratio,
    efficiency_at_max_power,
    fixed_power_protocol,
    fixed_power_sigma,
    max_efficiency_at_power,
    max_power_protocol,
    max_power_sigma,
    max_power_value,
    solve_mu,
)

log = logging.getLogger("periodic_engine")

TOP_FRACTION = 1.0 - 1e-8
DEFAULT_GRID = {"synthesize": 201, "tradeoff": 50, "sweep": 7}


# ---------------------------------------------------------------------------
# synthesize


def cmd_synthesize(cfg, writer: Writer) -> dict:
    summaries = {}
    n = cfg.grid or DEFAULT_GRID["synthesize"]
    for label, profile in build_profiles(cfg, "carnot:4,1"):
        params = build_params(cfg.params, profile)
        p_star = max_power_value(profile, params)
        P = p_star if cfg.power is None else cfg.power
        if cfg.power is None or P == p_star:
            protocol, sigma, mu = max_power_protocol(profile, params), max_power_sigma(profile, params), None
        else:
            mu = solve_mu(profile, params, P)
            protocol = fixed_power_protocol(profile, params, P, mu=mu)
            sigma = fixed_power_sigma(profile, params, P)
        t = np.linspace(0.0, profile.period, n)
        q, T, sv = protocol(t), profile(t), sigma(t)
        writer.table(f"protocol_{label}", ["t", "q", "T", "sigma_v"], zip(t, q, T, sv))
        try:
            eta = max_efficiency_at_power(profile, params, P)
        except DegenerateProfile:
            eta = None
        summary = {
            "profile": label,
            "P_star": p_star,
            "power": P,
            "eta": eta,
            "mu": mu,
            "q_min": float(np.min(q)),
            "q_max": float(np.max(q)),
            "drive_ratio": drive_ratio(profile, params, protocol),
            "friction_ratio": params.friction_ratio,
            "params": asdict(params),
        }
        if profile.two_level() is not None and cfg.power is None:
            T_h, T_c, _ = profile.two_level()
            summary["eta_Q_curzon_ahlborn"] = 1.0 - math.sqrt(T_c / T_h)
        writer.summary(f"summary_{label}", summary)
        summaries[label] = summary
        if cfg.figures:
            from .plotting import protocol_figure

            writer.written.append(protocol_figure(writer.out_dir, label, t, q, T, sv))
    return summaries


# ---------------------------------------------------------------------------
# tradeoff


def tradeoff_curve(profile, params, n: int):
    """``(P, eta*)`` on ``n`` uniform points of ``[0, (1 - 1e-8) P*]``."""
    p_star = max_power_value(profile, params)
    powers = np.linspace(0.0, TOP_FRACTION * p_star, n)
    rows = []
    for P in powers:
        mu = solve_mu(profile, params, float(P))
        rows.append((float(P), float(P) / p_star, max_efficiency_at_power(profile, params, float(P)), mu))
    return p_star, rows


def cmd_tradeoff(cfg, writer: Writer) -> dict:
    n = cfg.grid or DEFAULT_GRID["tradeoff"]
    out, curves = {}, []
    for label, profile in build_profiles(cfg, "carnot:4,1"):
        params = build_params(cfg.params, profile)
        p_star, rows = tradeoff_curve(profile, params, n)
        writer.table(f"tradeoff_{label}", ["P", "P_over_P_star", "eta", "mu"], rows)
        out[label] = {"P_star": p_star, "eta_at_max_power": efficiency_at_max_power(profile),
                      "eta_first": rows[0][2], "eta_last": rows[-1][2]}
        curves.append((label, [r[1] for r in rows], [r[2] for r in rows]))
    writer.summary("tradeoff_summary", out)
    if cfg.figures:
        from .plotting import tradeoff_figure

        writer.written.append(tradeoff_figure(writer.out_dir, curves))
    return out


# ---------------------------------------------------------------------------
# sweep


def sweep_point(coordinate, profile, params, protocol_name, jump_rule):
    """Full-model periodic orbit and ledger for one protocol; numerical failures become a status."""
    row = {"coordinate": coordinate, "protocol": protocol_name, "friction_ratio": params.friction_ratio}
    try:
        p_star = max_power_value(profile, params)
        row["P_star"] = p_star
        if protocol_name == "low_friction_optimal":
            protocol = max_power_protocol(profile, params)
        else:
            protocol = LinearResponseProtocol(profile, params)
        orbit = find_periodic_orbit("full", profile, protocol, params, jump_rule=jump_rule)
        ledger = cycle_uptake_and_efficiency(orbit.trajectory)
        _, resid = orbit.trajectory.equipartition_residual()
        row.update(power=ledger.power, power_ratio=ledger.power / p_star, eta_U=ledger.eta_U, eta_Q=ledger.eta_Q,
                   equipartition_max=float(resid.max()), iterations=orbit.iterations, status="ok")
    except NumericalError as exc:
        row["status"] = f"{type(exc).__name__}: {exc}"
    return row


def _sweep_task(args):
    return sweep_point(*args)


def sweep_tasks(cfg, profile, params):
    sw = cfg.sweep
    axis = sw.get("axis", "friction")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}")
    protocols = sw.get("protocols", ["low_friction_optimal"] if axis == "friction" else list(SWEEP_PROTOCOLS))
    bad = set(protocols) - set(SWEEP_PROTOCOLS)
    if bad:
        raise ConfigError(f"unknown sweep protocol(s) {sorted(bad)}; allowed {SWEEP_PROTOCOLS}")
    jump_rule = sw.get("jump_rule", "adiabatic")
    n = cfg.grid or DEFAULT_GRID["sweep"]
    if axis == "friction":
        values = sw.get("values", list(np.logspace(-3.0, 0.0, n)))
    else:
        values = sw.get("values", list(np.linspace(1.1, 4.0, n)))
    values = sorted(float(v) for v in values)
    if any(not v > 0 for v in values) or (axis == "temperature_ratio" and any(v <= 1 for v in values)):
        raise ConfigError("sweep values must be positive (temperature ratios > 1)")
    family = sw.get("family", "sinusoid")
    if family not in ("sinusoid", "carnot"):
        raise ConfigError("sweep.family must be 'sinusoid' or 'carnot'")
    tasks = []
    for v in values:
        if axis == "friction":
            prof, par = profile, params.with_(gamma=v * math.sqrt(params.m * params.q0))
        else:
            par = params
            if family == "sinusoid":
                shape = profile.pieces[0].shape
                mean = shape.mean if len(profile.pieces) == 1 and isinstance(shape, Sinusoid) else 2.5
                prof = sinusoid(mean, mean * (v - 1.0) / (v + 1.0), profile.period)
            else:
                levels = profile.two_level()
                T_c = levels[1] if levels else 1.0
                prof = carnot(v * T_c, T_c, profile.period)
        for name in protocols:
            tasks.append((v, prof, par, name, jump_rule))
    return axis, tasks


def cmd_sweep(cfg, writer: Writer) -> dict:
    (label, profile), *_ = build_profiles(cfg, "carnot:4,1")
    params = build_params(cfg.params, profile)
    axis, tasks = sweep_tasks(cfg, profile, params)
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs, mp_context=multiprocessing.get_context("fork")) as pool:
            rows = list(pool.map(_sweep_task, tasks))
    else:
        rows = [_sweep_task(t) for t in tasks]
    rows.sort(key=lambda r: (r["coordinate"], r["protocol"]))
    columns = ["coordinate", "protocol", "friction_ratio", "P_star", "power", "power_ratio", "eta_U", "eta_Q",
               "equipartition_max", "iterations", "status"]
    writer.table(f"sweep_{axis}", columns, [[r.get(c) for c in columns] for r in rows])
    failed = [r for r in rows if r["status"] != "ok"]
    for r in failed:
        log.warning("sweep point %s (%s) failed: %s", r["coordinate"], r["protocol"], r["status"])
    summary = {"axis": axis, "profile": label, "points": len(rows), "failed": len(failed)}
    writer.summary(f"sweep_{axis}_summary", summary)
    if cfg.figures:
        from .plotting import sweep_figure

        writer.written.append(sweep_figure(writer.out_dir, axis, rows))
    return {"rows": rows, **summary}


# ---------------------------------------------------------------------------
# montecarlo


def cmd_montecarlo(cfg, writer: Writer) -> dict:
    (label, profile), *_ = build_profiles(cfg, "carnot:4,1")
    params = build_params(cfg.params, profile)
    opts = dict(cfg.montecarlo)
    start = opts.pop("start", "periodic")
    if start not in ("periodic", "equilibrium"):
        raise ConfigError("montecarlo.start must be 'periodic' or 'equilibrium'")
    opts.setdefault("jump_rule", "adiabatic")
    mc = McConfig(seed=int(cfg.seed), **opts)
    p_star = max_power_value(profile, params)
    P = p_star if cfg.power is None else cfg.power
    protocol = max_power_protocol(profile, params) if cfg.power is None else fixed_power_protocol(profile, params, P)
    if start == "periodic":
        state0 = CovarianceState.from_array(
            find_periodic_orbit("full", profile, protocol, params, jump_rule=mc.jump_rule).state0)
    else:
        state0 = CovarianceState.equilibrium(profile(0.0), float(protocol(0.0)), params)
    stats = simulate(profile, protocol, params, mc, state0, jobs=cfg.jobs)
    n_cyc = mc.n_cycles_discard + mc.n_cycles_measure
    traj = integrate_full(profile, protocol, params, state0, n_cycles=n_cyc, jump_rule=mc.jump_rule)
    offset = mc.n_cycles_discard * profile.period
    ode = traj.evaluate(stats.times + offset)
    z = np.column_stack([(stats.sigma_x - ode[:, 0]) / stats.se_x, (stats.sigma_xv - ode[:, 1]) / stats.se_xv,
                         (stats.sigma_v - ode[:, 2]) / stats.se_v])
    ode_power = heat(traj, offset, traj.t_end) / (mc.n_cycles_measure * profile.period)
    columns = ["t", "sigma_x", "se_x", "sigma_xv", "se_xv", "sigma_v", "se_v", "q", "T"]
    writer.table("mc_stats", columns, stats.table())
    writer.table("mc_residuals", ["t", "ode_sigma_x", "ode_sigma_xv", "ode_sigma_v", "z_x", "z_xv", "z_v"],
                 np.column_stack([stats.times, ode, z]))
    eq = equipartition_diagnostic(stats)
    summary = {
        **stats.summary(),
        "profile": label,
        "reduced_model_power": P,
        "full_model_power": ode_power,
        "power_z_reduced": (stats.power - P) / stats.power_se,
        "max_abs_z": {"sigma_x": float(np.max(np.abs(z[:, 0]))), "sigma_xv": float(np.max(np.abs(z[:, 1]))),
                      "sigma_v": float(np.max(np.abs(z[:, 2])))},
        "equipartition_max": eq.max_residual,
        "config": {f.name: getattr(mc, f.name) for f in fields(mc)},
        "start": start,
    }
    writer.summary("mc_summary", summary)
    if cfg.figures:
        from .plotting import montecarlo_figure

        writer.written.append(montecarlo_figure(writer.out_dir, stats.times, stats.sigma_v, stats.se_v, ode[:, 2]))
    return summary


# ---------------------------------------------------------------------------
# validate


def acceptance_path() -> str:
    here = os.path.dirname(os.path.abspath(__file__))
    return os.path.normpath(os.path.join(here, "..", "..", "tests", "test_acceptance.py"))


def cmd_validate(args) -> int:
    path = acceptance_path()
    if not os.path.exists(path):
        raise ConfigError(f"acceptance suite not found at {path} (validate needs a source checkout)")
    proc = subprocess.run([sys.executable, "-m", "pytest", path, "-q", "-s", "-p", "no:cacheprovider"])
    return 0 if proc.returncode == 0 else 3


# ---------------------------------------------------------------------------
# argument parsing


COMMANDS = {
    "synthesize": cmd_synthesize,
    "tradeoff": cmd_tradeoff,
    "sweep": cmd_sweep,
    "montecarlo": cmd_montecarlo,
}

PROFILE_HELP = ("temperature profile: preset 'carnot:T_h,T_c[,period[,hot_fraction]]', "
                "'sinusoid:mean,amplitude[,period[,phase]]', "
                "'sqrt_sinusoid:root_mean,root_amplitude[,period[,phase]]', 'constant:T[,period]', "
                "inline JSON or a JSON file; repeatable (default carnot:4,1)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run file; command-line flags override its values")
    common.add_argument("--profile", action="append", help=PROFILE_HELP)
    common.add_argument("--params", help="JSON object (inline or file) with m, gamma, k_B, t_f, q0; "
                                         "defaults m=gamma=k_B=1, t_f=profile period, q0 with gamma/sqrt(m q0)=1e-2")
    common.add_argument("--power", type=float, help="target power (default: maximum power)")
    common.add_argument("--grid", type=int, help="grid size: protocol samples (201), tradeoff points (50), "
                                                 "sweep points (7)")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--format", choices=("csv", "json"), help="table format (default csv)")
    common.add_argument("--seed", type=int, help="Monte Carlo seed (default 0)")
    common.add_argument("--jobs", type=int, help="worker processes for sweeps and Monte Carlo (default 1)")
    common.add_argument("--figures", action="store_true", default=None, help="also render PNG figures")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(
        prog="periodic-engine",
        description="Optimal protocols and energetics of an underdamped Brownian heat engine "
                    "driven by a periodic bath temperature.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synthesize", parents=[common], help="optimal protocol table and summary per profile")
    sub.add_parser("tradeoff", parents=[common], help="maximal efficiency versus power per profile")
    sub.add_parser(
        "sweep", parents=[common],
        help="full-model power and efficiency over friction or temperature ratio",
        description="Sweep options go in the run file under 'sweep': axis (friction | temperature_ratio, "
                    "default friction), values (friction: gamma/sqrt(m q0), default logspace(-3, 0); "
                    "temperature_ratio: T_h/T_c, default linspace(1.1, 4)), protocols "
                    "(low_friction_optimal, linear_response), family (sinusoid | carnot, default sinusoid), "
                    "jump_rule (sudden | adiabatic, default adiabatic).")
    sub.add_parser(
        "montecarlo", parents=[common], help="ensemble simulation checked against the covariance ODE",
        description="Options go in the run file under 'montecarlo': n_particles (1e5), dt (1e-4), "
                    "n_cycles_discard (0), n_cycles_measure (1), n_record (50), scheme (baoab | euler_maruyama), "
                    "jump_rule (adiabatic), block_size (16384), stratonovich (true), start (periodic | equilibrium).")
    sub.add_parser("validate", help="run the acceptance suite")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "validate":
        return cmd_validate(args)
    file_values = load_run_file(args.config) if args.config else {}
    overrides = {"profiles": args.profile, "params": args.params, "power": args.power, "grid": args.grid,
                 "out": args.out, "format": args.format, "seed": args.seed, "jobs": args.jobs,
                 "figures": args.figures}
    cfg = resolve(file_values, overrides)
    writer = Writer(cfg.out, cfg.digest(args.command), cfg.format)
    COMMANDS[args.command](cfg, writer)
    for path in writer.written:
        print(path)
    return 0


def main(argv=None) -> int:
    try:
        code = run(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = 2
    except NumericalError as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        code = 3
    return code


if __name__ == "__main__":
    sys.exit(main())
