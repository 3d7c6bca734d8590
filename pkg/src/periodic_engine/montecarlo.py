"""Ensemble simulation of the underdamped Langevin particle.

Each particle obeys ``dx = v dt``, ``m dv = (-q(t) x - gamma v) dt + sqrt(2 gamma k_B T(t)) dW``.
Work is accumulated pathwise as the potential-energy change whenever ``q``
is updated, and heat follows from the energy balance of every particle.

Time stepping defaults to the BAOAB splitting: half kicks by the trap force,
half drifts, and an exact Ornstein-Uhlenbeck velocity update in the middle.
Within a step ``q`` and ``T`` are frozen at the midpoint; ``q`` is switched at
step boundaries, which is where work is booked. Plain Euler-Maruyama is
available for comparison but is only consistent for ``dt << m / gamma``
and ``dt << gamma / q``.

Random numbers come from ``SeedSequence(seed, spawn_key=(block,))``: particles
are processed in fixed blocks, each with its own PCG64 stream, and block
results are combined in block order, so output does not depend on the number
of workers.
"""

from __future__ import annotations

import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import CovarianceState
from .errors import ConfigError, UnstableStep
from .profiles import TemperatureProfile
from .synthesis import EngineParams, Protocol, _check_period

BLOCK_SIZE = 16_384
OVERFLOW_GUARD = 1e100
SCHEMES = ("baoab", "euler_maruyama")


@dataclass(frozen=True)
class McConfig:
    n_particles: int = 100_000
    dt: float = 1e-4
    n_cycles_discard: int = 0
    n_cycles_measure: int = 1
    seed: int = 0
    n_record: int = 50
    scheme: str = "baoab"
    jump_rule: str = "sudden"
    block_size: int = BLOCK_SIZE
    stratonovich: bool = True

    def validate(self, profile: TemperatureProfile, protocol: Protocol, params: EngineParams) -> int:
        """Check the configuration against the model; returns steps per cycle."""
        if self.n_particles < 1000:
            raise ConfigError(f"n_particles must be at least 1000, got {self.n_particles}")
        if not self.dt > 0.0:
            raise ConfigError("dt must be positive")
        if self.n_cycles_measure < 1 or self.n_cycles_discard < 0:
            raise ConfigError("need n_cycles_measure >= 1 and n_cycles_discard >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if self.jump_rule not in ("sudden", "adiabatic"):
            raise ConfigError("jump_rule must be 'sudden' or 'adiabatic'")
        if self.block_size < 1:
            raise ConfigError("block_size must be positive")
        q_max = float(np.max(protocol.sample(20_001)[1]))
        limit = 0.01 * min(math.sqrt(params.m / q_max), params.m / params.gamma)
        if self.dt > limit * (1.0 + 1e-9):
            raise ConfigError(f"dt = {self.dt:g} exceeds 0.01 min(sqrt(m/q), m/gamma) = {limit:.3g}")
        period = profile.period
        steps = round(period / self.dt)
        if abs(steps * self.dt - period) > 1e-9 * period:
            raise ConfigError("dt must divide the period")
        if self.n_record < 1 or steps % self.n_record:
            raise ConfigError(f"n_record must divide the {steps} steps per cycle")
        for tj in protocol.jump_times:
            k = tj / self.dt
            if abs(k - round(k)) > 1e-6:
                raise ConfigError(f"protocol jump at t = {tj:g} is not on the time grid")
        return steps


@dataclass
class EnsembleStats:
    """Empirical second moments at record nodes and per-cycle energetics, with standard errors.

    Moments are raw (about zero), matching the zero-mean ensemble of the
    covariance equations.
    """

    times: np.ndarray
    q: np.ndarray
    T: np.ndarray
    sigma_x: np.ndarray
    sigma_xv: np.ndarray
    sigma_v: np.ndarray
    se_x: np.ndarray
    se_xv: np.ndarray
    se_v: np.ndarray
    work: float
    work_se: float
    heat: float
    heat_se: float
    heat_stratonovich: float
    heat_stratonovich_se: float
    power: float
    power_se: float
    first_law_residual: float
    n_particles: int
    m: float
    period: float

    def table(self) -> np.ndarray:
        return np.column_stack([self.times, self.sigma_x, self.se_x, self.sigma_xv, self.se_xv,
                                self.sigma_v, self.se_v, self.q, self.T])

    def summary(self) -> dict:
        keys = ("work", "work_se", "heat", "heat_se", "heat_stratonovich", "heat_stratonovich_se",
                "power", "power_se", "first_law_residual", "n_particles")
        d = asdict(self)
        return {k: d[k] for k in keys}


@dataclass(frozen=True)
class _Schedule:
    """Per-step coefficients shared by all blocks."""

    q_mid: np.ndarray
    T_mid: np.ndarray
    dq_boundary: np.ndarray  # potential switch at the end of each step (coefficient of x^2 / 2)
    jump_scale: np.ndarray  # adiabatic (q+/q-)^(1/4) at step ends, 1 elsewhere
    q_after: np.ndarray  # stiffness in force right after each step boundary
    steps_per_cycle: int
    n_discard_steps: int
    record_stride: int


def _schedule(profile, protocol, params, cfg: McConfig, steps_per_cycle: int) -> _Schedule:
    n_total = steps_per_cycle * (cfg.n_cycles_discard + cfg.n_cycles_measure)
    dt = profile.period / steps_per_cycle
    k = np.arange(n_total)
    t_mid = (k + 0.5) * dt
    q_mid = protocol(t_mid)
    T_mid = profile(t_mid)
    q_next = np.append(q_mid[1:], protocol((n_total + 0.5) * dt))
    dq = q_next - q_mid
    scale = np.ones(n_total)
    if cfg.jump_rule == "adiabatic" and len(protocol.jump_times):
        ends = (k + 1) * dt
        tau = profile.cycle_time(ends)
        for tj in protocol.jump_times:
            hit = np.abs(tau - tj) < 0.25 * dt
            hit |= np.abs(tau - tj - profile.period) < 0.25 * dt
            for i in np.nonzero(hit)[0]:
                q_minus = float(protocol.left_limit(ends[i]))
                q_plus = float(protocol(ends[i]))
                scale[i] = (q_plus / q_minus) ** 0.25
    return _Schedule(q_mid, T_mid, dq, scale, q_next, steps_per_cycle,
                     steps_per_cycle * cfg.n_cycles_discard, steps_per_cycle // cfg.n_record)


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))


def _energy(x, v, q, m):
    return 0.5 * q * x * x + 0.5 * m * v * v


def _run_block(ctx, block: int, size: int):
    """Simulate one block; returns additive partial sums."""
    params, cfg, sched, chol = ctx
    m, g, kB = params.m, params.gamma, params.k_B
    rng = _block_rng(cfg.seed, block)
    z = rng.standard_normal((2, size))
    x = chol[0, 0] * z[0]
    v = chol[1, 0] * z[0] + chol[1, 1] * z[1]
    n_total = len(sched.q_mid)
    dt = cfg.dt
    half = 0.5 * dt
    c = math.exp(-g * dt / m)
    ou = np.sqrt((1.0 - c * c) * kB * sched.T_mid / m)
    em_noise = np.sqrt(2.0 * g * kB * sched.T_mid * dt) / m
    stride = sched.record_stride
    n_nodes = (n_total - sched.n_discard_steps) // stride + 1
    mom = np.zeros((n_nodes, 6))
    W = np.zeros(size)
    Q_strat = np.zeros(size)
    tmp = np.empty(size)
    xi = np.empty(size)

    def record(node):
        xx, xv, vv = x * x, x * v, v * v
        mom[node] = (xx.sum(), (xx * xx).sum(), xv.sum(), (xv * xv).sum(), vv.sum(), (vv * vv).sum())
        if not (np.all(np.isfinite(vv)) and vv.max() < OVERFLOW_GUARD):
            raise UnstableStep("velocity overflow; reduce dt")

    q_start = sched.q_mid[0] if sched.n_discard_steps == 0 else sched.q_after[sched.n_discard_steps - 1]
    E0 = None
    if sched.n_discard_steps == 0:
        E0 = _energy(x, v, q_start, m)
        record(0)
    for n in range(n_total):
        q = sched.q_mid[n]
        measuring = n >= sched.n_discard_steps
        if cfg.scheme == "baoab":
            kick = half * q / m
            v -= kick * x
            x += half * v
            rng.standard_normal(out=xi)
            if cfg.stratonovich and measuring:
                np.multiply(v, v, out=tmp)
                Q_strat -= 0.5 * m * tmp
            v *= c
            v += ou[n] * xi
            if cfg.stratonovich and measuring:
                np.multiply(v, v, out=tmp)
                Q_strat += 0.5 * m * tmp
            x += half * v
            v -= kick * x
        else:
            rng.standard_normal(out=xi)
            if cfg.stratonovich and measuring:
                v_old = v.copy()
            x_old = x.copy()
            x += dt * v
            v += (-(q / m) * x_old - (g / m) * v) * dt + em_noise[n] * xi
            if cfg.stratonovich and measuring:
                # damping and noise power with the midpoint velocity
                vm = 0.5 * (v_old + v)
                Q_strat += (-g * vm * vm + g * kB * sched.T_mid[n] / m) * dt
        # switch the trap to the next step's stiffness
        s = sched.jump_scale[n]
        if s != 1.0:
            q_minus = q
            x_e = _energy(x, v, q_minus, m)
            x /= s
            v *= s
            q_jump = q_minus * s ** 4
            if measuring:
                W += _energy(x, v, q_jump, m) - x_e
            dq = sched.q_after[n] - q_jump
        else:
            dq = sched.dq_boundary[n]
        if measuring:
            np.multiply(x, x, out=tmp)
            W += 0.5 * dq * tmp
        if n + 1 == sched.n_discard_steps:
            E0 = _energy(x, v, sched.q_after[n], m)
            record(0)
        elif measuring and (n + 1 - sched.n_discard_steps) % stride == 0:
            record((n + 1 - sched.n_discard_steps) // stride)
    E1 = _energy(x, v, sched.q_after[-1], m)
    Q = E1 - E0 - W
    resid = float(np.max(np.abs((E1 - E0) - (W + Q))) / max(np.max(np.abs(E1 - E0)), 1e-300))
    sums = np.array([W.sum(), (W * W).sum(), Q.sum(), (Q * Q).sum(), Q_strat.sum(), (Q_strat * Q_strat).sum()])
    return mom, sums, resid


_WORKER_CTX = None


def _worker(args):
    block, size = args
    return _run_block(_WORKER_CTX, block, size)


def _mean_se(total, total_sq, n):
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0) * n / (n - 1)
    return mean, math.sqrt(var / n)


def simulate(profile: TemperatureProfile, protocol: Protocol, params: EngineParams, cfg: McConfig,
             state0: CovarianceState | None = None, *, jobs: int = 1) -> EnsembleStats:
    """Run the ensemble and reduce it to moment and energy statistics.

    ``state0`` is the covariance of the initial Gaussian ensemble at ``t = 0+``;
    by default the Gibbs state at ``T(0)`` and ``q(0)``.
    """
    global _WORKER_CTX
    _check_period(profile, params)
    steps = cfg.validate(profile, protocol, params)
    sched = _schedule(profile, protocol, params, cfg, steps)
    if state0 is None:
        state0 = CovarianceState.equilibrium(profile(0.0), float(protocol(0.0)), params)
    if not state0.is_positive_definite():
        raise ConfigError("initial covariance must be positive definite")
    cov = np.array([[state0.sigma_x, state0.sigma_xv], [state0.sigma_xv, state0.sigma_v]])
    chol = np.linalg.cholesky(cov)
    ctx = (params, cfg, sched, chol)
    n_blocks = -(-cfg.n_particles // cfg.block_size)
    tasks = [(b, min(cfg.block_size, cfg.n_particles - b * cfg.block_size)) for b in range(n_blocks)]
    if jobs > 1 and n_blocks > 1:
        _WORKER_CTX = ctx
        try:
            with ProcessPoolExecutor(max_workers=jobs, mp_context=multiprocessing.get_context("fork")) as pool:
                results = list(pool.map(_worker, tasks))
        finally:
            _WORKER_CTX = None
    else:
        results = [_run_block(ctx, b, size) for b, size in tasks]

    n = cfg.n_particles
    # combine block partial sums in block order with exact summation
    stacked = np.stack([r[0] for r in results])  # (blocks, nodes, 6)
    mom = np.apply_along_axis(math.fsum, 0, stacked)
    sums = np.apply_along_axis(math.fsum, 0, np.stack([r[1] for r in results]))
    resid = max(r[2] for r in results)

    def moment(k):
        mean = mom[:, k] / n
        var = np.maximum(mom[:, k + 1] / n - mean * mean, 0.0) * n / (n - 1)
        return mean, np.sqrt(var / n)

    sx, se_x = moment(0)
    sxv, se_xv = moment(2)
    sv, se_v = moment(4)
    n_cyc = cfg.n_cycles_measure
    W, W_se = _mean_se(sums[0], sums[1], n)
    Q, Q_se = _mean_se(sums[2], sums[3], n)
    Qs, Qs_se = _mean_se(sums[4], sums[5], n)
    period = profile.period
    times = np.arange(len(sx)) * sched.record_stride * cfg.dt
    t_abs = times + cfg.n_cycles_discard * period
    q_nodes = protocol(t_abs)
    return EnsembleStats(
        times=times,
        q=np.asarray(q_nodes, dtype=float),
        T=np.asarray(profile(t_abs), dtype=float),
        sigma_x=sx,
        sigma_xv=sxv,
        sigma_v=sv,
        se_x=se_x,
        se_xv=se_xv,
        se_v=se_v,
        work=W / n_cyc,
        work_se=W_se / n_cyc,
        heat=Q / n_cyc,
        heat_se=Q_se / n_cyc,
        heat_stratonovich=Qs / n_cyc if cfg.stratonovich else float("nan"),
        heat_stratonovich_se=Qs_se / n_cyc if cfg.stratonovich else float("nan"),
        power=-W / (n_cyc * period),
        power_se=W_se / (n_cyc * period),
        first_law_residual=resid,
        n_particles=n,
        m=params.m,
        period=period,
    )


@dataclass(frozen=True)
class EquipartitionReport:
    times: np.ndarray
    residual: np.ndarray
    bound: np.ndarray  # three standard errors of the residual, propagated linearly
    max_residual: float


def equipartition_diagnostic(stats: EnsembleStats) -> EquipartitionReport:
    """``|q Sigma_x - m Sigma_v| / (m Sigma_v)`` at every record node."""
    kin = stats.m * stats.sigma_v
    res = np.abs(stats.q * stats.sigma_x - kin) / kin
    se = np.hypot(stats.q * stats.se_x, stats.m * stats.se_v) / kin
    return EquipartitionReport(stats.times, res, 3.0 * se, float(np.max(res)))
