"""Covariance dynamics of the driven, damped harmonic trap.

Two models are provided. The *reduced* model evolves only the velocity
variance and assumes equipartition between kinetic and potential energy; it is
the low-friction limit in which the optimal protocols are derived. The *full*
model evolves the complete covariance ``(Sigma_x, Sigma_xv, Sigma_v)`` of the
underdamped Langevin process and is exact for any friction.

Both systems are linear in the state, ``y' = A(t) y + b(t)``, and are
integrated segment-wise between the breakpoints of the temperature profile and
the protocol. Discontinuities of ``q`` are handled analytically by jump maps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _rk
from .errors import ConfigError, NoConvergence, PositivityLoss
from .profiles import TemperatureProfile, gauss_legendre
from .synthesis import EngineParams, Protocol, _check_period

log = logging.getLogger(__name__)

ODE_RTOL = 1e-9
ODE_ATOL = 1e-12
ORBIT_TOL = 1e-9
MAX_CYCLES = 10_000
JUMP_RULES = ("sudden", "adiabatic")


@dataclass(frozen=True)
class CovarianceState:
    """Second moments of position and velocity of the trapped particle."""

    sigma_x: float
    sigma_xv: float
    sigma_v: float

    @property
    def determinant(self) -> float:
        return self.sigma_x * self.sigma_v - self.sigma_xv ** 2

    def is_positive_definite(self) -> bool:
        return self.sigma_x > 0.0 and self.sigma_v > 0.0 and self.determinant > 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.sigma_x, self.sigma_xv, self.sigma_v])

    @classmethod
    def from_array(cls, y) -> "CovarianceState":
        y = np.asarray(y, dtype=float)
        return cls(float(y[0]), float(y[1]), float(y[2]))

    @classmethod
    def equilibrium(cls, T: float, q: float, params: EngineParams) -> "CovarianceState":
        """Gibbs state of the trap with stiffness ``q`` at temperature ``T``."""
        return cls(params.k_B * T / q, 0.0, params.k_B * T / params.m)

    def energy(self, q: float, m: float) -> float:
        return 0.5 * q * self.sigma_x + 0.5 * m * self.sigma_v


def _positive_definite(y) -> bool:
    return y[0] > 0.0 and y[2] > 0.0 and y[0] * y[2] - y[1] * y[1] > 0.0


# ---------------------------------------------------------------------------
# vector fields


def _reduced_coeffs(profile, protocol, params):
    g_m = params.gamma / params.m
    drive = params.gamma * params.k_B / params.m ** 2

    def coeffs(t):
        A = (0.5 * protocol.log_rate(t) - g_m)[:, None, None]
        b = (drive * profile(t))[:, None]
        return A, b

    return coeffs


def _full_coeffs(profile, protocol, params):
    m, g = params.m, params.gamma
    drive = 2.0 * g * params.k_B / m ** 2

    def coeffs(t):
        n = len(t)
        w2 = protocol(t) / m
        A = np.zeros((n, 3, 3))
        A[:, 0, 1] = 2.0
        A[:, 1, 0] = -w2
        A[:, 1, 1] = -g / m
        A[:, 1, 2] = 1.0
        A[:, 2, 1] = -2.0 * w2
        A[:, 2, 2] = -2.0 * g / m
        b = np.zeros((n, 3))
        b[:, 2] = drive * profile(t)
        return A, b

    return coeffs


def _clamped(coeffs, a: float, b: float):
    """Evaluate ``coeffs`` strictly inside ``[a, b)`` so the end of a segment sees left limits."""
    b_in = np.nextafter(b, a)

    def inner(t):
        return coeffs(np.clip(t, a, b_in))

    return inner


def jump_matrix(model: str, ratio: float, jump_rule: str = "sudden") -> np.ndarray:
    """Linear map applied to the state when ``q`` jumps by ``ratio = q+/q-``.

    Reduced model: ``Sigma_v -> Sigma_v sqrt(ratio)``, the exact integral of the
    ``qdot / 2q`` term across the discontinuity. Full model: ``"sudden"`` keeps
    every entry (the state is continuous, only the force changes);
    ``"adiabatic"`` applies the invariant-preserving rescaling of a switch that
    is slow on the oscillation time but fast on the damping time.
    """
    if model == "reduced":
        return np.array([[np.sqrt(ratio)]])
    if jump_rule == "sudden":
        return np.eye(3)
    if jump_rule == "adiabatic":
        r = np.sqrt(ratio)
        return np.diag([1.0 / r, 1.0, r])
    raise ConfigError(f"unknown jump rule {jump_rule!r}; choose from {JUMP_RULES}")


# ---------------------------------------------------------------------------
# trajectory


@dataclass
class JumpRecord:
    t: float
    before: np.ndarray
    after: np.ndarray
    q_before: float
    q_after: float


@dataclass
class Trajectory:
    """Dense solution of one model over ``[t_start, t_end]``.

    States are stored per accepted step with the stage derivatives needed by
    the continuous extension. The node grid returned by :meth:`nodes` holds
    both one-sided states at every jump time of ``T`` and ``q``.
    """

    model: str
    profile: TemperatureProfile
    protocol: Protocol
    params: EngineParams
    jump_rule: str
    t_start: float
    t_end: float
    step_t0: np.ndarray
    step_h: np.ndarray
    step_y0: np.ndarray
    step_Q: np.ndarray
    segment_ends: list
    jumps: list
    final_state: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.step_y0.shape[1]

    @property
    def initial_state(self) -> np.ndarray:
        return self.step_y0[0].copy()

    @property
    def n_steps(self) -> int:
        return len(self.step_h)

    def _dense(self, idx, theta):
        powers = theta[:, None] ** np.arange(1, 5)
        return self.step_y0[idx] + self.step_h[idx, None] * np.einsum("np,npd->nd", powers, self.step_Q[idx])

    def evaluate(self, t, side: str = "right") -> np.ndarray:
        """State at times ``t`` (shape ``(n, dim)``), one-sided at jumps."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < self.t_start) or np.any(t > self.t_end):
            raise ValueError("evaluation time outside the trajectory span")
        rule = "right" if side == "right" else "left"
        idx = np.searchsorted(self.step_t0, t, side=rule) - 1
        idx = np.clip(idx, 0, self.n_steps - 1)
        theta = np.clip((t - self.step_t0[idx]) / self.step_h[idx], 0.0, 1.0)
        out = self._dense(idx, theta)
        if side == "right":
            out[t == self.t_end] = self.final_state
        return out

    def __call__(self, t, side: str = "right") -> np.ndarray:
        return self.evaluate(t, side)

    def nodes(self, with_q: bool = False):
        """Grid times and states (and optionally the matching one-sided ``q``).

        Every segment contributes its step starts and its end point, so each
        segment boundary appears twice: left state first, then right state.
        """
        ts, ys, left = [], [], []
        start = 0
        for last, t_end, y_end in self.segment_ends:
            ts.extend(self.step_t0[start:last + 1])
            ys.extend(self.step_y0[start:last + 1])
            left.extend([False] * (last + 1 - start))
            ts.append(t_end)
            ys.append(y_end)
            left.append(True)
            start = last + 1
        if self.jumps and self.jumps[-1].t == self.t_end:
            ts.append(self.t_end)
            ys.append(self.final_state)
            left.append(False)
        t, Y = np.array(ts), np.array(ys)
        if not with_q:
            return t, Y
        left = np.array(left)
        q = np.where(left, self.protocol.left_limit(t), self.protocol(t))
        return t, Y, q

    def equipartition_residual(self):
        """``|q Sigma_x - m Sigma_v| / (m Sigma_v)`` on the node grid (full model only)."""
        if self.model != "full":
            raise ValueError("the reduced model assumes equipartition")
        t, Y, q = self.nodes(with_q=True)
        m = self.params.m
        return t, np.abs(q * Y[:, 0] - m * Y[:, 2]) / (m * Y[:, 2])

    def integrate(self, func, a: float | None = None, b: float | None = None, order: int = 8) -> float:
        """``int_a^b func(t, Y) dt`` with ``Y`` the dense state at Gauss nodes of every step.

        ``func`` receives times ``(n,)`` and states ``(n, dim)`` and returns ``(n,)``.
        Nodes are strictly interior to steps, so one-sided limits never matter.
        """
        a = self.t_start if a is None else float(a)
        b = self.t_end if b is None else float(b)
        if b <= a:
            return 0.0
        lo = np.maximum(self.step_t0, a)
        hi = np.minimum(self.step_t0 + self.step_h, b)
        keep = hi > lo
        idx = np.nonzero(keep)[0]
        lo, hi = lo[keep], hi[keep]
        x, w = gauss_legendre(order)
        width = hi - lo
        t = (lo[:, None] + width[:, None] * x).ravel()
        sidx = np.repeat(idx, order)
        theta = (t - self.step_t0[sidx]) / self.step_h[sidx]
        Y = self._dense(sidx, theta)
        vals = np.asarray(func(t, Y)).reshape(len(idx), order)
        return float(np.sum(vals @ w * width))

    def energy(self, t, side: str = "right") -> np.ndarray:
        """Mean energy ``q Sigma_x / 2 + m Sigma_v / 2`` (reduced: ``m Sigma_v``)."""
        Y = self.evaluate(t, side)
        q = self.protocol(t) if side == "right" else self.protocol.left_limit(t)
        return state_energy(self.model, Y, q, self.params.m)

    def table(self, n: int | None = None):
        """Columns ``t, sigma_x, sigma_xv, sigma_v, q, T`` on the node grid or ``n`` uniform times."""
        if n is None:
            t, Y, q = self.nodes(with_q=True)
        else:
            t = np.linspace(self.t_start, self.t_end, n)
            Y = self.evaluate(t)
            q = self.protocol(t)
        T = self.profile(t)
        if self.model == "reduced":
            sx = self.params.m * Y[:, 0] / q
            sxv = np.zeros_like(sx)
            sv = Y[:, 0]
        else:
            sx, sxv, sv = Y.T
        return np.column_stack([t, sx, sxv, sv, q, T])


def state_energy(model: str, Y, q, m: float):
    Y = np.atleast_2d(Y)
    if model == "reduced":
        return m * Y[:, 0]
    return 0.5 * q * Y[:, 0] + 0.5 * m * Y[:, 2]


# ---------------------------------------------------------------------------
# integration


def _event_grid(profile: TemperatureProfile, protocol: Protocol, t0: float, t1: float):
    """Segment boundaries in ``[t0, t1]`` and the subset of q-jump times in ``(t0, t1]``."""
    period = profile.period
    local = np.union1d(profile.breakpoints, protocol.breakpoints)
    q_jumps = np.asarray(protocol.jump_times, dtype=float)
    k0, k1 = int(np.floor(t0 / period)), int(np.ceil(t1 / period))
    bounds, jumps = {t0, t1}, []
    for k in range(k0, k1 + 1):
        for s in local:
            t = k * period + s
            if t0 < t < t1:
                bounds.add(t)
        for s in q_jumps:
            t = k * period + s
            if t0 < t <= t1:
                jumps.append(t)
    # q jumps at the cycle wrap are stored at 0 but apply at every multiple of the period
    jumps = sorted({round(j, 15) for j in jumps})
    return np.array(sorted(bounds)), jumps


def _integrate(model, profile, protocol, params, y0, t0, t1, *, rtol, atol, jump_rule, augment=False):
    _check_period(profile, params)
    if abs(protocol.period - profile.period) > 1e-12 * profile.period:
        raise ConfigError("protocol and profile periods differ")
    if jump_rule not in JUMP_RULES:
        raise ConfigError(f"unknown jump rule {jump_rule!r}; choose from {JUMP_RULES}")
    coeffs = _reduced_coeffs(profile, protocol, params) if model == "reduced" else _full_coeffs(profile, protocol, params)
    admissible = (lambda y: y[0] > 0.0) if model == "reduced" else _positive_definite
    y0 = np.asarray(y0, dtype=float).ravel()
    dim = len(y0)
    Y = np.column_stack([y0, np.eye(dim)]) if augment else y0[:, None]
    bounds, jumps = _event_grid(profile, protocol, t0, t1)
    jump_set = np.array(jumps)
    pieces, seg_ends, records = [], [], []
    h = None
    n_before = 0
    for a, b in zip(bounds[:-1], bounds[1:]):
        steps, Y, h = _rk.integrate_linear(_clamped(coeffs, a, b), a, b, Y, rtol=rtol, atol=atol, h0=h, admissible=admissible)
        pieces.append(steps)
        n_before += len(steps.h)
        seg_ends.append((n_before - 1, b, Y[:, 0].copy()))
        if len(jump_set) and np.min(np.abs(jump_set - b)) <= 1e-12 * profile.period:
            q_minus = float(protocol.left_limit(b))
            q_plus = float(protocol(b))
            J = jump_matrix(model, q_plus / q_minus, jump_rule)
            before = Y[:, 0].copy()
            Y = J @ Y
            records.append(JumpRecord(float(b), before, Y[:, 0].copy(), q_minus, q_plus))
    traj = Trajectory(
        model=model,
        profile=profile,
        protocol=protocol,
        params=params,
        jump_rule=jump_rule,
        t_start=float(t0),
        t_end=float(t1),
        step_t0=np.concatenate([p.t0 for p in pieces]),
        step_h=np.concatenate([p.h for p in pieces]),
        step_y0=np.concatenate([p.y0 for p in pieces]),
        step_Q=np.einsum("nkd,kp->npd", np.concatenate([p.K for p in pieces]), _rk.P),
        segment_ends=seg_ends,
        jumps=records,
        final_state=Y[:, 0].copy(),
    )
    return traj, Y


def integrate_reduced(profile, protocol, params, sigma_v0: float, *, t0: float = 0.0, n_cycles: int = 1,
                      rtol: float = ODE_RTOL, atol: float = ODE_ATOL) -> Trajectory:
    """Velocity variance of the low-friction model from ``t0`` over ``n_cycles`` periods.

    ``sigma_v0`` is the state just after ``t0``; q-jumps at ``t0 + k t_f`` for
    ``k >= 1`` are applied, so ``final_state`` is the state after the last wrap.
    """
    if not sigma_v0 > 0.0:
        raise ConfigError(f"sigma_v0 must be positive, got {sigma_v0!r}")
    t1 = t0 + n_cycles * profile.period
    traj, _ = _integrate("reduced", profile, protocol, params, [sigma_v0], t0, t1, rtol=rtol, atol=atol, jump_rule="sudden")
    return traj


def integrate_full(profile, protocol, params, state0, *, t0: float = 0.0, n_cycles: int = 1,
                   jump_rule: str = "sudden", rtol: float = ODE_RTOL, atol: float = ODE_ATOL) -> Trajectory:
    """Full covariance of the underdamped process from ``t0`` over ``n_cycles`` periods."""
    y0 = state0.as_array() if isinstance(state0, CovarianceState) else np.asarray(state0, dtype=float)
    if not _positive_definite(y0):
        raise ConfigError("initial covariance must be positive definite")
    t1 = t0 + n_cycles * profile.period
    traj, _ = _integrate("full", profile, protocol, params, y0, t0, t1, rtol=rtol, atol=atol, jump_rule=jump_rule)
    return traj


# ---------------------------------------------------------------------------
# periodic steady state


@dataclass
class PeriodicOrbit:
    state0: np.ndarray
    trajectory: Trajectory
    iterations: int
    residual: float


def orbit_residual(y_start, y_end) -> float:
    """Relative max-norm mismatch; the cross term is scaled by ``sqrt(Sigma_x Sigma_v)``."""
    y_start, y_end = np.asarray(y_start), np.asarray(y_end)
    if len(y_start) == 1:
        scale = np.abs(y_start)
    else:
        scale = np.abs(y_start).copy()
        scale[1] = np.sqrt(abs(y_start[0] * y_start[2]))
    return float(np.max(np.abs(y_end - y_start) / scale))


def default_guess(model, profile, protocol, params) -> np.ndarray:
    """Equilibrium at the temperature and stiffness just after ``t = 0``."""
    st = CovarianceState.equilibrium(profile(0.0), float(protocol(0.0)), params)
    return np.array([st.sigma_v]) if model == "reduced" else st.as_array()


def find_periodic_orbit(model: str, profile, protocol, params, guess=None, *, method: str = "newton",
                        orbit_tol: float = ORBIT_TOL, max_cycles: int = MAX_CYCLES, jump_rule: str = "sudden",
                        rtol: float = ODE_RTOL, atol: float = ODE_ATOL, damping: float = 0.5) -> PeriodicOrbit:
    """Fixed point of the one-period map.

    ``method="newton"`` exploits that the cycle map is affine: one integration
    of the variational equations gives its Jacobian, after which a chord
    iteration removes the remaining integration-level mismatch.
    ``method="fixed_point"`` iterates the map directly and switches to damped
    updates when the residual stops decreasing.
    """
    if model not in ("reduced", "full"):
        raise ConfigError(f"model must be 'reduced' or 'full', got {model!r}")
    if method not in ("newton", "fixed_point"):
        raise ConfigError(f"unknown orbit method {method!r}")
    y = default_guess(model, profile, protocol, params) if guess is None else np.atleast_1d(
        guess.as_array() if isinstance(guess, CovarianceState) else np.asarray(guess, dtype=float)).copy()
    period = profile.period
    kw = dict(rtol=rtol, atol=atol, jump_rule=jump_rule)

    def cycle(y0):
        traj, _ = _integrate(model, profile, protocol, params, y0, 0.0, period, **kw)
        return traj

    jac = None
    last_res = np.inf
    alpha = 1.0
    for it in range(1, max_cycles + 1):
        try:
            traj = cycle(y)
        except PositivityLoss:
            if method == "newton" and jac is not None:
                y = y_prev + 0.5 * (y - y_prev)
                continue
            raise
        F = traj.final_state
        res = orbit_residual(y, F)
        if res <= orbit_tol:
            return PeriodicOrbit(y.copy(), traj, it, res)
        y_prev = y.copy()
        if method == "newton":
            if jac is None:
                _, Yaug = _integrate(model, profile, protocol, params, y, 0.0, period, augment=True, **kw)
                radius = float(np.max(np.abs(np.linalg.eigvals(Yaug[:, 1:]))))
                if radius >= 1.0:
                    raise NoConvergence(f"cycle map is not contracting (spectral radius {radius:.4g}); "
                                        "the protocol pumps the trap parametrically and has no periodic state")
                jac = Yaug[:, 1:] - np.eye(len(y))
            y = y - np.linalg.solve(jac, F - y)
        else:
            if res >= last_res and alpha == 1.0:
                log.info("orbit iteration stalled at residual %.3g; switching to damping %.2f", res, damping)
                alpha = damping
            y = y + alpha * (F - y)
        last_res = res
    raise NoConvergence(f"no periodic orbit within {max_cycles} cycles (residual {last_res:.3g}); "
                        "increase max_cycles or the friction")
