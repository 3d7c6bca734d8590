"""Cycle energetics: work, heat, thermal uptake, dissipation and efficiencies.

Sign conventions: work and heat are counted as energy flowing *into* the
particle, so an engine has negative cycle work and positive power
``P = -W / t_f``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import ORBIT_TOL, Trajectory, orbit_residual, state_energy
from .errors import DegenerateCycle, NotCarnotProfile, NotPeriodic
from .synthesis import EngineParams

PERIODIC_TOL = 10 * ORBIT_TOL
# |U| and |W_diss| below this fraction of the cycle energy scale count as zero
QUASI_STATIC_RTOL = 1e-9


def rates(sigma_x: float, sigma_v: float, qdot: float, T: float, params: EngineParams) -> tuple[float, float]:
    """Instantaneous mean work and heat rates ``(dW/dt, dQ/dt)``."""
    dW = 0.5 * qdot * sigma_x
    dQ = params.gamma * (params.k_B * T / params.m - sigma_v)
    return dW, dQ


def _sigma_x(traj: Trajectory, t, Y):
    if traj.model == "reduced":
        return traj.params.m * Y[:, 0] / traj.protocol(t)
    return Y[:, 0]


def _sigma_v(traj: Trajectory, Y):
    return Y[:, 0] if traj.model == "reduced" else Y[:, 2]


def heat(traj: Trajectory, a: float | None = None, b: float | None = None) -> float:
    """Mean heat absorbed from the bath over ``[a, b]``."""
    p = traj.params
    return traj.integrate(lambda t, Y: p.gamma * (p.k_B * traj.profile(t) / p.m - _sigma_v(traj, Y)), a, b)


def work(traj: Trajectory) -> float:
    """Mean work done on the particle, smooth driving plus q-jumps."""
    smooth = traj.integrate(lambda t, Y: 0.5 * traj.protocol.rate(t) * _sigma_x(traj, t, Y))
    m = traj.params.m
    jumps = sum(
        float(state_energy(traj.model, j.after, j.q_after, m)[0] - state_energy(traj.model, j.before, j.q_before, m)[0])
        for j in traj.jumps
    )
    return smooth + jumps


def check_periodic(traj: Trajectory, tol: float = PERIODIC_TOL) -> float:
    res = orbit_residual(traj.initial_state, traj.final_state)
    if not res <= tol:
        raise NotPeriodic(f"trajectory does not close on itself (relative mismatch {res:.3g} > {tol:.3g})")
    return res


@dataclass(frozen=True)
class CyclePower:
    """Cycle-averaged power from the heat balance and from the work integral."""

    heat_side: float
    work_side: float

    def __float__(self) -> float:
        return self.heat_side

    @property
    def discrepancy(self) -> float:
        return abs(self.heat_side - self.work_side)


def cycle_power(traj: Trajectory, *, tol: float = PERIODIC_TOL) -> CyclePower:
    """Power of a periodic trajectory spanning one period."""
    check_periodic(traj, tol)
    span = traj.t_end - traj.t_start
    return CyclePower(heat(traj) / span, -work(traj) / span)


def entropy(traj: Trajectory, t, side: str = "right") -> np.ndarray:
    """Gaussian phase-space entropy (units of ``k_B``)."""
    Y = traj.evaluate(t, side)
    return _entropy(traj, np.atleast_1d(t), Y, side)


def _entropy(traj, t, Y, side="right"):
    if traj.model == "reduced":
        q = traj.protocol(t) if side == "right" else traj.protocol.left_limit(t)
        det = traj.params.m * Y[:, 0] ** 2 / q
    else:
        det = Y[:, 0] * Y[:, 2] - Y[:, 1] ** 2
    return math.log(2.0 * math.pi) + 1.0 + 0.5 * np.log(det)


def _entropy_rate(traj: Trajectory, t, Y):
    p = traj.params
    T = traj.profile(t)
    if traj.model == "reduced":
        sv = Y[:, 0]
        return -p.gamma / p.m + p.gamma * p.k_B * T / (p.m ** 2 * sv)
    sx, sxv, sv = Y.T
    w2 = traj.protocol(t) / p.m
    dsx = 2.0 * sxv
    dsxv = sv - w2 * sx - p.gamma / p.m * sxv
    dsv = -2.0 * w2 * sxv - 2.0 * p.gamma / p.m * sv + 2.0 * p.gamma * p.k_B / p.m ** 2 * T
    det = sx * sv - sxv ** 2
    return 0.5 * (dsx * sv + sx * dsv - 2.0 * sxv * dsxv) / det


def uptake(traj: Trajectory) -> float:
    """Thermal uptake ``k_B int T dS`` over the trajectory.

    The entropy is continuous across q-jumps under both jump rules, so only
    the smooth pieces contribute. For the reduced model this reduces to
    ``(k_B^2 gamma/m^2) int T^2/Sigma_v - (k_B gamma/m) int T``.
    """
    kB = traj.params.k_B
    return kB * traj.integrate(lambda t, Y: traj.profile(t) * _entropy_rate(traj, t, Y))


def uptake_stieltjes(traj: Trajectory) -> float:
    """Thermal uptake as ``-k_B int S dT`` with atoms ``-k_B S (T+ - T-)`` at temperature jumps.

    Equal to :func:`uptake` on a closed cycle; kept as an independent check.
    """
    prof = traj.profile
    kB = traj.params.k_B
    smooth = traj.integrate(lambda t, Y: _entropy(traj, t, Y) * prof.slope(t))
    atoms = 0.0
    period = prof.period
    k0, k1 = math.floor(traj.t_start / period), math.ceil(traj.t_end / period)
    for k in range(k0, k1 + 1):
        for s in prof.jump_times:
            tj = k * period + s
            if traj.t_start < tj <= traj.t_end:
                S = float(entropy(traj, tj, side="left")[0])
                atoms += S * (prof(tj) - prof.left_limit(tj))
    return -kB * (smooth + atoms)


@dataclass
class CycleLedger:
    """Per-cycle energy balance. ``eta_Q`` is only filled for two-level profiles."""

    work_W: float
    heat_Q: float
    uptake_U: float
    dissipation: float
    power: float
    eta_U: float
    eta_Q: float | None = None
    power_work_side: float = float("nan")
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def cycle_uptake_and_efficiency(traj: Trajectory, *, tol: float = PERIODIC_TOL) -> CycleLedger:
    """Fill the full ledger for a periodic trajectory of either model.

    ``eta_U = -W/U``. A cycle with vanishing uptake and dissipation is
    quasi-static and gets ``eta_U = 1``; any other cycle with ``U <= 0``
    is flagged ``non_positive_uptake`` and gets ``eta_U = nan``.
    """
    check_periodic(traj, tol)
    span = traj.t_end - traj.t_start
    W = work(traj)
    Q = heat(traj)
    U = uptake(traj)
    diss = U + W
    flags = []
    p = traj.params
    scale = p.gamma * p.k_B * abs(traj.profile.max_value) / p.m * span
    if abs(U) <= QUASI_STATIC_RTOL * scale and abs(diss) <= QUASI_STATIC_RTOL * scale:
        eta_U = 1.0
        flags.append("quasi_static")
    elif U <= 0.0:
        eta_U = float("nan")
        flags.append("non_positive_uptake")
    else:
        eta_U = -W / U
    eta_Q = None
    if traj.profile.two_level() is not None:
        try:
            eta_Q = eta_Q_carnot(traj, tol=tol)
        except DegenerateCycle:
            flags.append("degenerate_cycle")
    return CycleLedger(
        work_W=W,
        heat_Q=Q,
        uptake_U=U,
        dissipation=diss,
        power=Q / span,
        eta_U=eta_U,
        eta_Q=eta_Q,
        power_work_side=-W / span,
        flags=flags,
    )


def eta_Q_carnot(traj: Trajectory, *, tol: float = PERIODIC_TOL) -> float:
    """``-W / Q_h`` with ``Q_h`` the heat drawn during the hot stroke of a two-level profile."""
    levels = traj.profile.two_level()
    if levels is None:
        raise NotCarnotProfile("eta_Q needs a two-level piecewise-constant profile; the hot bath is otherwise ambiguous")
    T_h, T_c, (a, b) = levels
    check_periodic(traj, tol)
    period = traj.profile.period
    first = math.floor((traj.t_start - a) / period)
    Q_h = 0.0
    for k in range(first, math.ceil((traj.t_end - a) / period) + 1):
        lo, hi = max(k * period + a, traj.t_start), min(k * period + b, traj.t_end)
        if hi > lo:
            Q_h += heat(traj, lo, hi)
    W = work(traj)
    p = traj.params
    scale = p.gamma * p.k_B * T_h / p.m * (traj.t_end - traj.t_start)
    if T_h == T_c or abs(Q_h) <= QUASI_STATIC_RTOL * scale:
        raise DegenerateCycle("no net heat drawn from the hot bath; eta_Q is undefined")
    return -W / Q_h
