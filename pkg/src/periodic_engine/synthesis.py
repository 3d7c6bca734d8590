"""Optimal variance trajectories and stiffness protocols.

Everything here works in the low-friction (equipartition) picture, where the
only dynamical quantity is the velocity variance ``Sigma_v`` and a periodic
cycle must satisfy ``int_0^tf T / Sigma_v dt = m tf / k_B``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BracketFailure, ConfigError, DegenerateProfile, PowerOutOfRange
from .profiles import (
    QUAD_TOL,
    CumulativeIntegral,
    ProfileMoments,
    Sinusoid,
    TemperatureProfile,
    moments,
    period_mean,
)

log = logging.getLogger(__name__)

DEFAULT_FRICTION_RATIO = 1e-2
MU_RTOL = 1e-12
MU_CEILING = 1e15


@dataclass(frozen=True)
class EngineParams:
    """Physical constants of the engine.

    ``q0`` is the stiffness at ``t = 0+``. When omitted it is chosen so that
    ``gamma / sqrt(m q0) = 1e-2``, i.e. comfortably inside the low-friction regime.
    """

    m: float = 1.0
    gamma: float = 1.0
    k_B: float = 1.0
    t_f: float = 1.0
    q0: float | None = None

    def __post_init__(self):
        if self.q0 is None:
            object.__setattr__(self, "q0", self.gamma ** 2 / (self.m * DEFAULT_FRICTION_RATIO ** 2))
        for name in ("m", "gamma", "k_B", "t_f", "q0"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive finite number, got {v!r}")

    @property
    def kappa(self) -> float:
        """``m / (gamma k_B)``."""
        return self.m / (self.gamma * self.k_B)

    @property
    def friction_ratio(self) -> float:
        """``gamma / sqrt(m q0)``; small values mean low friction."""
        return self.gamma / math.sqrt(self.m * self.q0)

    def with_(self, **changes) -> "EngineParams":
        vals = dict(m=self.m, gamma=self.gamma, k_B=self.k_B, t_f=self.t_f, q0=self.q0)
        vals.update(changes)
        return EngineParams(**vals)


def _check_period(profile: TemperatureProfile, params: EngineParams):
    if abs(profile.period - params.t_f) > 1e-12 * params.t_f:
        raise ConfigError(f"profile period {profile.period} differs from t_f = {params.t_f}")


# ---------------------------------------------------------------------------
# protocols


class Protocol:
    """Periodic trap stiffness ``q(t) > 0``.

    Subclasses provide ``log_q`` (right limit), ``log_q_left`` and
    ``log_rate`` (``qdot / q`` on smooth pieces). ``jump_times`` lists the
    cycle times in ``[0, period)`` where q is discontinuous.
    """

    period: float
    breakpoints: np.ndarray
    jump_times: np.ndarray

    def log_q(self, t):
        raise NotImplementedError

    def log_q_left(self, t):
        return self.log_q(t)

    def log_rate(self, t):
        raise NotImplementedError

    def __call__(self, t):
        return np.exp(self.log_q(t))

    def left_limit(self, t):
        return np.exp(self.log_q_left(t))

    def rate(self, t):
        """``dq/dt`` on smooth pieces."""
        return self(t) * self.log_rate(t)

    def jump_ratio(self, t) -> float:
        """``q(t+) / q(t-)``."""
        return float(np.exp(self.log_q(t) - self.log_q_left(t)))

    def sample(self, n: int = 2001):
        t = np.linspace(0.0, self.period, n)
        return t, self(t)


class ConstantProtocol(Protocol):
    def __init__(self, q0: float, period: float):
        self.q0 = float(q0)
        self.period = float(period)
        self.breakpoints = np.array([0.0, self.period])
        self.jump_times = np.array([])

    def log_q(self, t):
        return np.full(np.shape(t), math.log(self.q0)) if np.ndim(t) else math.log(self.q0)

    def log_rate(self, t):
        return np.zeros(np.shape(t)) if np.ndim(t) else 0.0


class TiltedProtocol(Protocol):
    """``q(t) = q0 h(T(t))/h(T(0)) exp(2 gamma (t - c G(t)) / m)`` with ``G = int_0^t g(T)``.

    Both optimal protocols have this form: max power uses ``h = T``,
    ``g = sqrt(T)``; max efficiency at fixed power uses ``h = T^2 + mu T``,
    ``g = sqrt(T / (T + mu))``. ``c`` is fixed by periodicity, ``c G(t_f) = t_f``.
    """

    def __init__(self, profile: TemperatureProfile, params: EngineParams, log_h_ratio, dlog_h, g, c: float):
        self.profile = profile
        self.params = params
        self.period = profile.period
        self.breakpoints = profile.breakpoints
        self.jump_times = profile.jump_times
        self._log_h_ratio = log_h_ratio
        self._dlog_h = dlog_h
        self._g = g
        self.G = CumulativeIntegral(profile, g)
        self.c = float(c)
        self._T0 = profile(0.0)
        self._alpha = 2.0 * params.gamma / params.m

    def r(self, t):
        """The rescaled clock ``c G(t)``; ``r(t_f) = t_f`` for a periodic protocol."""
        return self.c * self.G(t)

    def _tilt(self, t):
        tau = self.profile.cycle_time(t)
        return self._alpha * (tau - self.c * self.G(tau))

    def log_q(self, t):
        return math.log(self.params.q0) + self._log_h_ratio(self.profile(t), self._T0) + self._tilt(t)

    def log_q_left(self, t):
        tau = self.profile.cycle_time(t)
        tau = np.where(tau == 0.0, self.period, tau) if np.ndim(tau) else (self.period if tau == 0.0 else tau)
        tilt = self._alpha * (tau - self.c * self.G(tau))
        return math.log(self.params.q0) + self._log_h_ratio(self.profile.left_limit(t), self._T0) + tilt

    def log_rate(self, t):
        T = self.profile(t)
        return self._dlog_h(T) * self.profile.slope(t) + self._alpha * (1.0 - self.c * self._g(T))


class LinearResponseProtocol(Protocol):
    """First-order small-amplitude protocol ``q ~ (1 + (dT/Tbar) cos(omega t + phase))``.

    Normalised so that ``q(0) = q0``, matching the optimal protocols.
    """

    def __init__(self, profile: TemperatureProfile, params: EngineParams):
        _check_period(profile, params)
        if len(profile.pieces) != 1 or not isinstance(profile.pieces[0].shape, Sinusoid):
            raise ConfigError("the linear-response protocol needs a single-sinusoid profile")
        s = profile.pieces[0].shape
        self.a = s.amplitude / s.mean
        self.omega = s.omega
        self.phase = s.phase
        self.q0 = params.q0
        self.period = profile.period
        self.breakpoints = np.array([0.0, self.period])
        self.jump_times = np.array([])
        self._norm = 1.0 + self.a * math.cos(self.phase)

    def log_q(self, t):
        t = np.asarray(t, dtype=float)
        val = np.log(self.q0 * (1.0 + self.a * np.cos(self.omega * t + self.phase)) / self._norm)
        return val if val.ndim else float(val)

    def log_rate(self, t):
        t = np.asarray(t, dtype=float)
        arg = self.omega * t + self.phase
        val = -self.a * self.omega * np.sin(arg) / (1.0 + self.a * np.cos(arg))
        return val if val.ndim else float(val)


# ---------------------------------------------------------------------------
# variance trajectories


@dataclass(frozen=True)
class SigmaTrajectory:
    """Velocity variance over one period.

    ``kind`` is ``"max_power"`` (``scale * sqrt(T)``), ``"fixed_power"``
    (``sqrt(T^2 + mu T) / sqrt(lambda)``) or ``"numeric"`` (``evaluator``).
    """

    kind: str
    profile: TemperatureProfile
    scale: float = 1.0
    mu: float | None = None
    sqrt_lambda: float | None = None
    evaluator: Callable | None = field(default=None, compare=False)

    def __call__(self, t):
        if self.kind == "numeric":
            return self.evaluator(t)
        T = self.profile(t)
        if self.kind == "max_power":
            return self.scale * np.sqrt(T)
        return np.sqrt(T * T + self.mu * T) / self.sqrt_lambda

    def integral(self, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
        """``int_0^tf f(T, Sigma_v) dt`` for the analytic kinds."""
        from .profiles import integrate_functional

        if self.kind == "max_power":
            return integrate_functional(self.profile, lambda T: f(T, self.scale * np.sqrt(T)))
        if self.kind == "fixed_power":
            return integrate_functional(self.profile, lambda T: f(T, np.sqrt(T * T + self.mu * T) / self.sqrt_lambda))
        raise ValueError("integral() needs an analytic trajectory")


# ---------------------------------------------------------------------------
# maximum power


def max_power_sigma(profile: TemperatureProfile, params: EngineParams) -> SigmaTrajectory:
    _check_period(profile, params)
    mom = moments(profile)
    scale = params.k_B / params.m * mom.mean_sqrtT
    return SigmaTrajectory("max_power", profile, scale=scale)


def max_power_value(profile: TemperatureProfile, params: EngineParams, mom: ProfileMoments | None = None) -> float:
    """``P* = (gamma k_B / m) Var(sqrt T)``."""
    _check_period(profile, params)
    mom = mom or moments(profile)
    return params.gamma * params.k_B / params.m * mom.var_sqrtT


def max_power_protocol(profile: TemperatureProfile, params: EngineParams) -> TiltedProtocol:
    _check_period(profile, params)
    G_total = period_mean(profile, np.sqrt) * profile.period
    return TiltedProtocol(
        profile,
        params,
        log_h_ratio=lambda T, T0: np.log(T / T0),
        dlog_h=lambda T: 1.0 / T,
        g=np.sqrt,
        c=params.t_f / G_total,
    )


# ---------------------------------------------------------------------------
# maximum efficiency at fixed power


def _mean_T(profile: TemperatureProfile) -> float:
    return period_mean(profile, lambda T: T)


def _mu_terms(profile: TemperatureProfile, mu: float, mean_T: float | None = None):
    """Period means entering the multiplier equation and the efficiency formula.

    Returns ``(A, B, C, mean_T)`` with ``A = mean(sqrt(T (T+mu))) / s``,
    ``B = s mean(sqrt(T/(T+mu)))`` and ``C = s mean(T^1.5 / sqrt(T+mu))``,
    where ``s = sqrt(mean_T + mu)`` keeps all three O(1) for huge ``mu``.
    """
    if mean_T is None:
        mean_T = _mean_T(profile)
    s = math.sqrt(mean_T + mu)

    def f(T):
        root = np.sqrt(T + mu)
        sT = np.sqrt(T)
        return np.stack([sT * root / s, sT / root * s, T * sT / root * s])

    a, b, c = period_mean(profile, f)
    return float(a), float(b), float(c), mean_T


def mu_residual(profile: TemperatureProfile, params: EngineParams, P: float, mu: float, mean_T: float | None = None) -> float:
    """Multiplier equation divided by ``t_f^2``; positive at ``mu = 0``, negative as ``mu -> inf``."""
    a, b, _, mean_T = _mu_terms(profile, mu, mean_T)
    return a * b - (mean_T - params.kappa * P)


def _check_power(P: float, p_star: float, allow_top: bool):
    if not (P >= 0.0 and math.isfinite(P)):
        raise PowerOutOfRange(f"power must be non-negative, got {P}")
    if P > p_star or (P == p_star and not allow_top):
        raise PowerOutOfRange(f"power {P} is not below the maximum power {p_star}")


def solve_mu(profile: TemperatureProfile, params: EngineParams, P: float, *, rtol: float = MU_RTOL) -> float:
    """Lagrange multiplier ``mu >= 0`` of the power constraint.

    The residual is bracketed by growing ``mu_hi`` tenfold from ``mean_T`` and
    then bisected. The whole ladder up to ``1e15 mean_T`` is scanned so that a
    second sign change, if one ever shows up, is reported; the smallest root
    is returned.
    """
    _check_period(profile, params)
    mom = moments(profile)
    p_star = max_power_value(profile, params, mom)
    _check_power(P, p_star, allow_top=False)
    if P == 0.0:
        return 0.0

    def F(mu):
        return mu_residual(profile, params, P, mu, mom.mean_T)

    ladder = [0.0]
    mu = mom.mean_T
    while mu <= MU_CEILING * mom.mean_T:
        ladder.append(mu)
        mu *= 10.0
    values = [F(m) for m in ladder]
    changes = [i for i in range(1, len(values)) if (values[i - 1] > 0) != (values[i] > 0)]
    if not changes:
        raise BracketFailure(f"no sign change of the multiplier equation up to mu = {ladder[-1]:.3g}")
    if len(changes) > 1:
        log.warning("multiplier equation changes sign %d times on the ladder; returning the smallest root", len(changes))
    i = changes[0]
    lo, hi = ladder[i - 1], ladder[i]
    f_lo = values[i - 1]
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        f_mid = F(mid)
        if f_mid == 0.0:
            return mid
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _sqrt_lambda(profile, params, P, mu, mean_T):
    a, _, _, _ = _mu_terms(profile, mu, mean_T)
    s = math.sqrt(mean_T + mu)
    # int sqrt(T^2 + mu T) / ((k_B/m) int T - (t_f/gamma) P), per unit time
    return a * s / (params.k_B / params.m * mean_T - P / params.gamma)


def fixed_power_sigma(profile: TemperatureProfile, params: EngineParams, P: float) -> SigmaTrajectory:
    """Minimum-dissipation variance trajectory delivering power ``P``."""
    _check_period(profile, params)
    p_star = max_power_value(profile, params)
    _check_power(P, p_star, allow_top=True)
    if P == p_star:
        return max_power_sigma(profile, params)
    mu = solve_mu(profile, params, P)
    mean_T = period_mean(profile, lambda T: T)
    return SigmaTrajectory("fixed_power", profile, mu=mu, sqrt_lambda=_sqrt_lambda(profile, params, P, mu, mean_T))


def fixed_power_protocol(profile: TemperatureProfile, params: EngineParams, P: float, mu: float | None = None) -> TiltedProtocol:
    _check_period(profile, params)
    p_star = max_power_value(profile, params)
    _check_power(P, p_star, allow_top=True)
    if P == p_star:
        return max_power_protocol(profile, params)
    if mu is None:
        mu = solve_mu(profile, params, P)
    a, _, _, mean_T = _mu_terms(profile, mu)
    s = math.sqrt(mean_T + mu)
    # r(t) = [int sqrt(T^2+mu T)] / [int T - t_f m P/(gamma k_B)] * int_0^t sqrt(T/(T+mu))
    c = a * s / (mean_T - params.kappa * P)

    def log_h_ratio(T, T0):
        return np.log(T / T0) + np.log1p((T - T0) / (T0 + mu))

    protocol = TiltedProtocol(
        profile,
        params,
        log_h_ratio=log_h_ratio,
        dlog_h=lambda T: (2.0 * T + mu) / (T * T + mu * T),
        g=lambda T: np.sqrt(T / (T + mu)),
        c=c,
    )
    protocol.mu = mu
    return protocol


def max_efficiency_at_power(profile: TemperatureProfile, params: EngineParams, P: float) -> float:
    """Highest thermal-uptake efficiency compatible with power ``P``."""
    _check_period(profile, params)
    mom = moments(profile)
    p_star = max_power_value(profile, params, mom)
    _check_power(P, p_star, allow_top=True)
    if P == p_star:
        return efficiency_at_max_power(profile)
    mu = solve_mu(profile, params, P)
    a, _, c, mean_T = _mu_terms(profile, mu)
    kP = params.kappa * P
    bracket = a * c / (mean_T - kP) - mean_T
    if P == 0.0:
        return 1.0
    return kP / bracket


def efficiency_at_max_power(profile: TemperatureProfile, *, tol: float = QUAD_TOL) -> float:
    """Efficiency of the max-power protocol, evaluated two ways that must agree."""
    mom = moments(profile)
    if mom.var_sqrtT <= tol * mom.mean_T:
        raise DegenerateProfile("sqrt(T) does not fluctuate; efficiency at maximum power is undefined")
    via_cov = mom.mean_sqrtT * mom.var_sqrtT / mom.cov_T_sqrtT
    via_mu3 = 1.0 / (2.0 + mom.mu3_sqrtT / (mom.var_sqrtT * mom.mean_sqrtT))
    if abs(via_cov - via_mu3) > 1e-10 * abs(via_mu3):
        raise AssertionError(f"efficiency formulas disagree: {via_cov!r} vs {via_mu3!r}")
    return via_mu3


def drive_ratio(profile: TemperatureProfile, params: EngineParams, protocol: Protocol | None = None) -> float:
    """``omega * sqrt(m / q)`` with the fastest drive frequency and the softest trap.

    Must be small for the low-friction picture to apply; reported, never enforced.
    """
    if protocol is None:
        q_min = params.q0
    else:
        q_min = float(np.min(protocol.sample(4001)[1]))
    return profile.drive_frequency() * math.sqrt(params.m / q_min)
