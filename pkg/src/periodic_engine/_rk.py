"""Dormand-Prince 5(4) stepper with the 4th-order continuous extension."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PositivityLoss, StepFailure

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = [np.asarray(row) for row in [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# 5th minus embedded 4th order weights, FSAL stage last
E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# Shampine's dense-output polynomial coefficients (columns: theta^1..theta^4)
P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


@dataclass
class Steps:
    """Accepted steps of one smooth segment: start times, widths, start states, stage matrices."""

    t0: np.ndarray
    h: np.ndarray
    y0: np.ndarray
    K: np.ndarray
    y_end: np.ndarray


def dense(y0, h, K, theta):
    """Continuous extension at fractions ``theta`` (array) of one step."""
    theta = np.asarray(theta, dtype=float)
    powers = theta[..., None] ** np.arange(1, 5)
    Q = K.T @ P  # (dim, 4)
    return y0 + h * powers @ Q.T


def _rms(x):
    return np.sqrt(np.mean(x * x))


def integrate_linear(coeffs, t0: float, t1: float, Y0, *, rtol: float, atol: float, h0: float | None = None, admissible=None) -> tuple[Steps, np.ndarray, float]:
    """Integrate ``Y' = A(t) Y + b(t) e_0^T`` from ``t0`` to ``t1`` (last step clipped).

    ``Y`` is ``(dim, ncol)``; the inhomogeneous term only drives column 0, so
    extra columns carry the fundamental matrix. ``coeffs(times)`` returns the
    stacked ``A`` (n, dim, dim) and ``b`` (n, dim) for a vector of times, which
    lets all stage coefficients of a step be evaluated in one call.
    ``admissible(y) -> bool`` vets column 0 of each accepted step; failures
    halve the step.

    Returns the accepted steps (column 0 only), the final ``Y`` and the last
    step-size proposal.
    """
    Y = np.array(Y0, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    dim = Y.shape[0]
    t = float(t0)
    span = float(t1) - t
    if span <= 0.0:
        empty = Steps(np.empty(0), np.empty(0), np.empty((0, dim)), np.empty((0, 7, dim)), Y[:, 0].copy())
        return empty, Y, h0 if h0 is not None else span
    A0, b0 = coeffs(np.array([t]))
    F = A0[0] @ Y
    F[:, 0] += b0[0]
    if h0 is None:
        scale = atol + rtol * np.abs(Y)
        d0, d1 = _rms(Y / scale), _rms(F / scale)
        h = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6 * span
    else:
        h = h0
    h = min(h, span)
    h_min = 16.0 * np.spacing(max(abs(t0), abs(t1), span))
    ts, hs, ys, Ks = [], [], [], []
    K = np.empty((7,) + Y.shape)
    while t < t1:
        if h < h_min:
            raise StepFailure(f"step size underflow at t = {t:.6g}")
        last = t + h >= t1 or (t1 - (t + h)) < h_min
        if last:
            h = t1 - t
        As, bs = coeffs(t + C[1:] * h)
        K[0] = F
        for s in range(1, 6):
            Ys = Y + h * np.tensordot(A[s], K[:s], axes=1)
            K[s] = As[s - 1] @ Ys
            K[s][:, 0] += bs[s - 1]
        Y_new = Y + h * np.tensordot(B, K[:6], axes=1)
        F_new = As[4] @ Y_new
        F_new[:, 0] += bs[4]
        K[6] = F_new
        err = h * np.tensordot(E, K, axes=1)
        scale = atol + rtol * np.maximum(np.abs(Y), np.abs(Y_new))
        err_norm = _rms(err / scale)
        if err_norm <= 1.0 and (admissible is None or admissible(Y_new[:, 0])):
            ts.append(t)
            hs.append(h)
            ys.append(Y[:, 0].copy())
            Ks.append(K[:, :, 0].copy())
            t = t1 if last else t + h
            Y = Y_new
            F = F_new
            factor = MAX_FACTOR if err_norm == 0.0 else min(MAX_FACTOR, SAFETY * err_norm ** -0.2)
            h_next = h * factor
            if not last:
                h = h_next
        elif err_norm <= 1.0:
            h *= 0.5
            if h < h_min:
                raise PositivityLoss(f"covariance lost positive definiteness at t = {t:.6g}")
        else:
            h *= max(MIN_FACTOR, SAFETY * err_norm ** -0.2)
    steps = Steps(np.array(ts), np.array(hs), np.array(ys), np.array(Ks), Y[:, 0].copy())
    return steps, Y, h_next
