"""Periodic bath-temperature profiles and the sqrt(T) functionals built on them.

A profile is a list of smooth pieces tiling one period ``[0, t_f)``. Jumps are
only allowed at piece boundaries, so every quadrature panel lives inside a
single smooth piece and discontinuities are never straddled. Evaluation at a
jump returns the right limit (a cycle runs from ``0+`` to ``t_f+``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NonConvergent

GAUSS_ORDER = 16
QUAD_TOL = 1e-10
MAX_LEVELS = 20

_EDGE_RTOL = 1e-12


# ---------------------------------------------------------------------------
# piece shapes


@dataclass(frozen=True)
class Constant:
    value: float

    def value_at(self, t):
        return np.full(np.shape(t), float(self.value))

    def slope_at(self, t):
        return np.zeros(np.shape(t))

    def bounds(self, a: float, b: float) -> tuple[float, float]:
        return float(self.value), float(self.value)

    def knots(self) -> tuple[float, ...]:
        return ()


@dataclass(frozen=True)
class Sinusoid:
    """``mean + amplitude * cos(omega * t + phase)`` with ``t`` in cycle time."""

    mean: float
    amplitude: float
    omega: float
    phase: float = 0.0

    def value_at(self, t):
        return self.mean + self.amplitude * np.cos(self.omega * np.asarray(t, dtype=float) + self.phase)

    def slope_at(self, t):
        return -self.amplitude * self.omega * np.sin(self.omega * np.asarray(t, dtype=float) + self.phase)

    def bounds(self, a: float, b: float) -> tuple[float, float]:
        vals = [float(self.value_at(a)), float(self.value_at(b))]
        if self.omega != 0.0 and self.amplitude != 0.0:
            lo, hi = sorted((self.omega * a + self.phase, self.omega * b + self.phase))
            k0, k1 = math.ceil(lo / math.pi), math.floor(hi / math.pi)
            if k1 - k0 > 2:
                vals += [self.mean - abs(self.amplitude), self.mean + abs(self.amplitude)]
            else:
                vals += [self.mean + self.amplitude * math.cos(k * math.pi) for k in range(k0, k1 + 1)]
        return min(vals), max(vals)

    def knots(self) -> tuple[float, ...]:
        return ()


@dataclass(frozen=True)
class SampledLinear:
    """Knots ``(t, T)`` joined by straight lines in T."""

    knots_tT: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(t), float(T)) for t, T in self.knots_tT)
        if len(pts) < 2:
            raise ConfigError("a sampled piece needs at least two knots")
        ts = [p[0] for p in pts]
        if any(t1 <= t0 for t0, t1 in zip(ts, ts[1:])):
            raise ConfigError("sampled knot times must be strictly increasing")
        object.__setattr__(self, "knots_tT", pts)
        object.__setattr__(self, "_t", np.array(ts))
        object.__setattr__(self, "_T", np.array([p[1] for p in pts]))

    def value_at(self, t):
        return np.interp(t, self._t, self._T)

    def slope_at(self, t):
        t = np.asarray(t, dtype=float)
        j = np.clip(np.searchsorted(self._t, t, side="right") - 1, 0, len(self._t) - 2)
        return (self._T[j + 1] - self._T[j]) / (self._t[j + 1] - self._t[j])

    def bounds(self, a: float, b: float) -> tuple[float, float]:
        inside = self._T[(self._t > a) & (self._t < b)]
        vals = np.concatenate([inside, self.value_at(np.array([a, b]))])
        return float(vals.min()), float(vals.max())

    def knots(self) -> tuple[float, ...]:
        return tuple(float(t) for t in self._t[1:-1])


@dataclass(frozen=True)
class SqrtSinusoid:
    """``(root_mean + root_amplitude * cos(omega * t + phase))**2``.

    ``sqrt(T)`` is a symmetric sinusoid, so its third central moment vanishes.
    """

    root_mean: float
    root_amplitude: float
    omega: float
    phase: float = 0.0

    @property
    def root(self) -> Sinusoid:
        return Sinusoid(self.root_mean, self.root_amplitude, self.omega, self.phase)

    def value_at(self, t):
        return self.root.value_at(t) ** 2

    def slope_at(self, t):
        return 2.0 * self.root.value_at(t) * self.root.slope_at(t)

    def bounds(self, a: float, b: float) -> tuple[float, float]:
        lo, hi = self.root.bounds(a, b)
        if lo <= 0.0:
            return 0.0 if hi >= 0.0 else hi * hi, max(lo * lo, hi * hi)
        return lo * lo, hi * hi

    def knots(self) -> tuple[float, ...]:
        return ()


Shape = Constant | Sinusoid | SqrtSinusoid | SampledLinear


@dataclass(frozen=True)
class Piece:
    t_start: float
    t_end: float
    shape: Shape


# ---------------------------------------------------------------------------
# profile


@dataclass(frozen=True)
class TemperatureProfile:
    """A strictly positive, ``period``-periodic temperature with declared smooth pieces."""

    period: float
    pieces: tuple[Piece, ...]
    starts: np.ndarray = field(init=False, repr=False, compare=False)
    breakpoints: np.ndarray = field(init=False, repr=False, compare=False)
    jump_times: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        period = float(self.period)
        if not period > 0.0 or not math.isfinite(period):
            raise ConfigError(f"period must be positive and finite, got {self.period!r}")
        pieces = tuple(self.pieces)
        if not pieces:
            raise ConfigError("a profile needs at least one piece")
        tol = _EDGE_RTOL * period
        if abs(pieces[0].t_start) > tol:
            raise ConfigError("the first piece must start at t = 0")
        if abs(pieces[-1].t_end - period) > tol:
            raise ConfigError("the last piece must end at t = period")
        for p, nxt in zip(pieces, pieces[1:]):
            if abs(p.t_end - nxt.t_start) > tol:
                raise ConfigError(f"pieces do not tile the period: gap/overlap at t = {p.t_end}")
        cleaned = []
        for i, p in enumerate(pieces):
            t0 = 0.0 if i == 0 else cleaned[-1].t_end
            t1 = period if i == len(pieces) - 1 else float(p.t_end)
            if not t1 > t0:
                raise ConfigError(f"piece {i} has non-positive duration")
            if isinstance(p.shape, SampledLinear):
                kt = p.shape._t
                if abs(kt[0] - t0) > tol or abs(kt[-1] - t1) > tol:
                    raise ConfigError(f"sampled piece {i} knots must span [{t0}, {t1}]")
            lo, _ = p.shape.bounds(t0, t1)
            if not lo > 0.0:
                raise ConfigError(f"temperature must stay positive; piece {i} reaches {lo}")
            cleaned.append(Piece(t0, t1, p.shape))
        object.__setattr__(self, "period", period)
        object.__setattr__(self, "pieces", tuple(cleaned))
        object.__setattr__(self, "starts", np.array([p.t_start for p in cleaned]))

        bps = {0.0, period}
        for p in cleaned:
            bps.add(p.t_start)
            bps.update(p.shape.knots())
        object.__setattr__(self, "breakpoints", np.array(sorted(bps)))

        jumps = []
        for i, p in enumerate(cleaned):
            prev = cleaned[i - 1]
            left = float(prev.shape.value_at(prev.t_end))
            right = float(p.shape.value_at(p.t_start))
            if abs(left - right) > 1e-14 * max(abs(left), abs(right)):
                jumps.append(p.t_start)
        object.__setattr__(self, "jump_times", np.array(sorted(jumps)))

    # -- evaluation -------------------------------------------------------

    def cycle_time(self, t):
        """Reduce ``t`` into ``[0, period)``."""
        t = np.asarray(t, dtype=float)
        tau = t - self.period * np.floor(t / self.period)
        return np.where(tau >= self.period, tau - self.period, tau)

    def _dispatch(self, tau, idx, method: str):
        out = np.empty(np.shape(tau))
        for i in np.unique(idx):
            mask = idx == i
            out[mask] = getattr(self.pieces[i].shape, method)(tau[mask])
        return out

    def _eval(self, t, method: str, left: bool):
        t = np.asarray(t, dtype=float)
        tau = np.atleast_1d(self.cycle_time(t))
        if left:
            tau = np.where(tau == 0.0, self.period, tau)
            idx = np.searchsorted(self.starts, tau, side="left") - 1
        else:
            idx = np.searchsorted(self.starts, tau, side="right") - 1
        out = self._dispatch(tau, idx, method)
        return out.reshape(t.shape) if t.ndim else float(out[0])

    def __call__(self, t):
        """T(t), right limit at jumps."""
        return self._eval(t, "value_at", left=False)

    def left_limit(self, t):
        return self._eval(t, "value_at", left=True)

    def slope(self, t):
        """dT/dt on the piece containing ``t`` (right side)."""
        return self._eval(t, "slope_at", left=False)

    def piece_values(self, index: int, tau):
        return self.pieces[index].shape.value_at(tau)

    # -- structure --------------------------------------------------------

    def smooth_intervals(self, a: float = 0.0, b: float | None = None):
        """Split ``[a, b]`` into ``(lo, hi, piece_index, shift)`` smooth sub-intervals.

        ``shift`` is the multiple of the period to subtract from ``lo``/``hi`` to
        land in cycle time.
        """
        b = self.period if b is None else float(b)
        a = float(a)
        if b < a:
            raise ValueError("integration interval must have a <= b")
        out = []
        if b == a:
            return out
        k = math.floor(a / self.period)
        bps = self.breakpoints
        while k * self.period < b:
            shift = k * self.period
            for lo, hi in zip(bps[:-1], bps[1:]):
                lo_abs, hi_abs = max(lo + shift, a), min(hi + shift, b)
                if hi_abs - lo_abs > _EDGE_RTOL * self.period:
                    piece = int(np.searchsorted(self.starts, lo, side="right") - 1)
                    out.append((lo_abs, hi_abs, piece, shift))
            k += 1
        return out

    @property
    def min_value(self) -> float:
        return min(p.shape.bounds(p.t_start, p.t_end)[0] for p in self.pieces)

    @property
    def max_value(self) -> float:
        return max(p.shape.bounds(p.t_start, p.t_end)[1] for p in self.pieces)

    @property
    def is_piecewise_constant(self) -> bool:
        return all(isinstance(p.shape, Constant) for p in self.pieces)

    def two_level(self):
        """``(T_hot, T_cold, (t0, t1) of the hot piece)`` for two-piece constant profiles, else None."""
        if len(self.pieces) != 2 or not self.is_piecewise_constant:
            return None
        p0, p1 = self.pieces
        hot, cold = (p0, p1) if p0.shape.value >= p1.shape.value else (p1, p0)
        return float(hot.shape.value), float(cold.shape.value), (hot.t_start, hot.t_end)

    def drive_frequency(self) -> float:
        """Fastest angular frequency present: sinusoid pieces, else the fundamental."""
        omegas = [abs(p.shape.omega) for p in self.pieces if isinstance(p.shape, Sinusoid)]
        omegas += [2.0 * abs(p.shape.omega) for p in self.pieces if isinstance(p.shape, SqrtSinusoid)]
        return max([2.0 * math.pi / self.period, *omegas])

    def scaled(self, c: float) -> "TemperatureProfile":
        """The profile ``c * T(t)``."""
        def scale(s):
            if isinstance(s, Constant):
                return Constant(c * s.value)
            if isinstance(s, Sinusoid):
                return Sinusoid(c * s.mean, c * s.amplitude, s.omega, s.phase)
            if isinstance(s, SqrtSinusoid):
                r = math.sqrt(c)
                return SqrtSinusoid(r * s.root_mean, r * s.root_amplitude, s.omega, s.phase)
            return SampledLinear(tuple((t, c * T) for t, T in s.knots_tT))
        return TemperatureProfile(self.period, tuple(Piece(p.t_start, p.t_end, scale(p.shape)) for p in self.pieces))


# ---------------------------------------------------------------------------
# constructors


def constant(T: float, period: float = 1.0) -> TemperatureProfile:
    return TemperatureProfile(period, (Piece(0.0, period, Constant(T)),))


def carnot(T_h: float, T_c: float, period: float = 1.0, hot_fraction: float = 0.5) -> TemperatureProfile:
    """Two-level profile: ``T_h`` on ``[0, hot_fraction*period)``, ``T_c`` after."""
    if not 0.0 < hot_fraction < 1.0:
        raise ConfigError("hot_fraction must lie in (0, 1)")
    t_mid = hot_fraction * period
    return TemperatureProfile(period, (Piece(0.0, t_mid, Constant(T_h)), Piece(t_mid, period, Constant(T_c))))


def sinusoid(mean: float, amplitude: float, period: float = 1.0, phase: float = 0.0) -> TemperatureProfile:
    """``mean + amplitude*cos(2 pi t / period + phase)``."""
    return TemperatureProfile(period, (Piece(0.0, period, Sinusoid(mean, amplitude, 2.0 * math.pi / period, phase)),))


def sqrt_sinusoid(root_mean: float, root_amplitude: float, period: float = 1.0, phase: float = 0.0) -> TemperatureProfile:
    """``T = (root_mean + root_amplitude*cos(2 pi t / period + phase))**2``; ``sqrt(T)`` is a plain sinusoid."""
    shape = SqrtSinusoid(root_mean, root_amplitude, 2.0 * math.pi / period, phase)
    return TemperatureProfile(period, (Piece(0.0, period, shape),))


def sampled(times: Sequence[float], temps: Sequence[float], period: float | None = None) -> TemperatureProfile:
    """Linear interpolation through ``(times, temps)`` over one full period.

    ``times`` must start at 0; if the last knot is before ``period`` the profile
    is closed linearly back to ``temps[0]``.
    """
    times = [float(t) for t in times]
    temps = [float(T) for T in temps]
    period = times[-1] if period is None else float(period)
    if times[-1] < period:
        times.append(period)
        temps.append(temps[0])
    return TemperatureProfile(period, (Piece(0.0, period, SampledLinear(tuple(zip(times, temps)))),))


# ---------------------------------------------------------------------------
# quadrature


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on ``[0, 1]``."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _panel_sums(profile, f, group, level, order):
    """Integral and |f|-mass of each interval in ``group`` using 2**level panels."""
    x, w = gauss_legendre(order)
    n_pan = 2 ** level
    lo = np.array([g[0] for g in group])
    hi = np.array([g[1] for g in group])
    shift = np.array([g[3] for g in group])
    width = (hi - lo) / n_pan
    starts = lo[:, None] + width[:, None] * np.arange(n_pan)[None, :]
    nodes = starts[..., None] + width[:, None, None] * x
    tau = nodes - shift[:, None, None]
    T = profile.piece_values(group[0][2], tau)
    vals = np.asarray(f(T), dtype=float)
    wts = width[:, None, None] * w
    total = (vals * wts).sum(axis=(-1, -2))
    mass = (np.abs(vals) * wts).sum(axis=(-1, -2))
    return total, mass


def _converge_intervals(profile, f, intervals, tol, order, max_levels):
    """Refine each smooth interval until successive levels agree; returns (values, levels)."""
    by_piece: dict[int, list[int]] = {}
    for i, iv in enumerate(intervals):
        by_piece.setdefault(iv[2], []).append(i)
    results: dict[int, np.ndarray] = {}
    levels: dict[int, int] = {}
    for idxs in by_piece.values():
        pending = list(idxs)
        prev = None
        for level in range(max_levels + 1):
            group = [intervals[i] for i in pending]
            total, mass = _panel_sums(profile, f, group, level, order)
            if prev is not None:
                done = np.all(np.abs(total - prev) <= tol * np.maximum(mass, 1e-300), axis=tuple(range(total.ndim - 1)))
                keep = []
                for j, i in enumerate(pending):
                    if done[j]:
                        results[i] = total[..., j]
                        levels[i] = level
                    else:
                        keep.append(j)
                pending = [pending[j] for j in keep]
                if not pending:
                    break
                total = total[..., keep]
            prev = total
        else:
            raise NonConvergent(f"quadrature did not converge within {max_levels} refinement levels")
    return results, levels


def integrate_functional(
    profile: TemperatureProfile,
    f: Callable[[np.ndarray], np.ndarray],
    a: float = 0.0,
    b: float | None = None,
    *,
    tol: float = QUAD_TOL,
    order: int = GAUSS_ORDER,
    max_levels: int = MAX_LEVELS,
):
    """``int_a^b f(T(t)) dt`` by composite Gauss-Legendre between breakpoints.

    ``f`` must be vectorised. It may return extra leading axes (several
    functionals at once), in which case an array is returned.
    """
    intervals = profile.smooth_intervals(a, b)
    if not intervals:
        probe = np.asarray(f(np.ones(1)))
        return np.zeros(probe.shape[:-1]) if probe.ndim > 1 else 0.0
    results, _ = _converge_intervals(profile, f, intervals, tol, order, max_levels)
    total = sum(results[i] for i in range(len(intervals)))
    return float(total) if np.ndim(total) == 0 else np.asarray(total)


def period_mean(profile: TemperatureProfile, f, **kw):
    """Overline average of ``f(T)`` over one period."""
    return integrate_functional(profile, f, 0.0, profile.period, **kw) / profile.period


class CumulativeIntegral:
    """``G(t) = int_0^t g(T(s)) ds`` for any real ``t``, in O(log panels) per call.

    Panel edges are the converged quadrature panels of each smooth interval, so
    the partial panel at the query point is integrated with the same rule.
    """

    def __init__(self, profile: TemperatureProfile, g, *, tol=QUAD_TOL, order=GAUSS_ORDER, max_levels=MAX_LEVELS):
        self.profile = profile
        self.g = g
        self.order = order
        intervals = profile.smooth_intervals(0.0, profile.period)
        _, levels = _converge_intervals(profile, g, intervals, tol, order, max_levels)
        edges, pieces = [], []
        for i, (lo, hi, piece, _) in enumerate(intervals):
            n = 2 ** levels[i]
            e = np.linspace(lo, hi, n + 1)[:-1]
            edges.append(e)
            pieces.append(np.full(n, piece))
        self.edges = np.concatenate(edges + [[profile.period]])
        self.panel_piece = np.concatenate(pieces)
        x, w = gauss_legendre(order)
        lo, hi = self.edges[:-1], self.edges[1:]
        width = hi - lo
        panel_vals = np.empty(len(lo))
        for piece in np.unique(self.panel_piece):
            m = self.panel_piece == piece
            nodes = lo[m][:, None] + width[m][:, None] * x
            panel_vals[m] = (g(profile.piece_values(piece, nodes)) * w).sum(axis=1) * width[m]
        self.cumulative = np.concatenate([[0.0], np.cumsum(panel_vals)])
        self.total = float(self.cumulative[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        period = self.profile.period
        k = np.floor(t / period)
        tau = np.atleast_1d(t - k * period)
        k = np.atleast_1d(k)
        wrap = tau >= period
        tau = np.where(wrap, tau - period, tau)
        k = np.where(wrap, k + 1, k)
        j = np.clip(np.searchsorted(self.edges, tau, side="right") - 1, 0, len(self.edges) - 2)
        x, w = gauss_legendre(self.order)
        lo = self.edges[j]
        width = tau - lo
        nodes = lo[:, None] + width[:, None] * x
        partial = np.empty(len(tau))
        pieces = self.panel_piece[j]
        for piece in np.unique(pieces):
            m = pieces == piece
            partial[m] = (self.g(self.profile.piece_values(piece, nodes[m])) * w).sum(axis=1) * width[m]
        out = k * self.total + self.cumulative[j] + partial
        return out.reshape(t.shape) if t.ndim else float(out[0])


# ---------------------------------------------------------------------------
# moments


@dataclass(frozen=True)
class ProfileMoments:
    """Period averages of powers of sqrt(T).

    ``cov_T_sqrtT`` is ``mean_T32 - mean_T * mean_sqrtT`` evaluated as the
    centred integral ``mean(d^2 (sqrt(T) + mean_sqrtT))`` with ``d = sqrt(T) - mean_sqrtT``,
    which is insensitive to rounding in ``mean_sqrtT`` at first order.
    """

    mean_T: float
    mean_sqrtT: float
    mean_T32: float
    var_sqrtT: float
    mu3_sqrtT: float
    cov_T_sqrtT: float


def moments(profile: TemperatureProfile, *, tol: float = QUAD_TOL) -> ProfileMoments:
    raw = period_mean(profile, lambda T: np.stack([T, np.sqrt(T), T ** 1.5]), tol=tol)
    mean_T, mean_s, mean_T32 = (float(v) for v in raw)

    def centred(T):
        d = np.sqrt(T) - mean_s
        return np.stack([d * d, d ** 3, d * d * (np.sqrt(T) + mean_s)])

    var, mu3, cov = (float(v) for v in period_mean(profile, centred, tol=tol))
    return ProfileMoments(mean_T, mean_s, mean_T32, max(var, 0.0), mu3, cov)
