"""Adaptive Dormand-Prince 5(4) integrator with a post-step projection hook."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

# Dormand-Prince tableau (Hairer, Norsett & Wanner, Solving ODEs I).
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


class StepSizeCollapse(RuntimeError):
    pass


@dataclass
class ODESolution:
    t: np.ndarray       # accepted nodes in integration order
    y: np.ndarray       # shape (len(t), n)
    nfev: int
    n_rejected: int


def dopri5(f: Callable[[float, np.ndarray], np.ndarray], t0: float, y0, t1: float, *,
           rtol: float = 1e-6, atol: float = 1e-9, max_step: float = np.inf,
           first_step: float | None = None, project: Callable[[np.ndarray], np.ndarray] | None = None,
           max_steps: int = 1_000_000) -> ODESolution:
    """Integrate ``y' = f(t, y)`` from ``t0`` to ``t1`` (either direction).

    ``project`` is applied to every accepted state (e.g. a positivity floor);
    the derivative is re-evaluated when it moves the state.
    """
    y = np.array(y0, dtype=float)
    if project is not None:
        y = project(y)
    direction = np.sign(t1 - t0) or 1.0
    span = abs(t1 - t0)
    max_step = min(max_step, span) if span > 0 else max_step
    ts, ys = [t0], [y.copy()]
    if span == 0:
        return ODESolution(np.array(ts), np.array(ys), 0, 0)

    t = t0
    k1 = f(t, y)
    nfev = 1
    h = first_step or _initial_step(f, t, y, k1, direction, rtol, atol)
    nfev += 1
    h = min(h, max_step)
    rejected = 0
    hmin = 16 * np.finfo(float).eps * max(abs(t0), abs(t1), 1.0)
    for _ in range(max_steps):
        if direction * (t1 - t) <= 0:
            break
        h = min(h, abs(t1 - t))
        if h < hmin:
            raise StepSizeCollapse(
                f"step size collapsed to {h:.3e} at t={t:.6g}; "
                "try a larger floor or looser tolerances")
        dt = direction * h
        k = [k1]
        for s in range(1, 7):
            ys_ = y + dt * sum(a * kk for a, kk in zip(_A[s], k))
            k.append(f(t + _C[s] * dt, ys_))
        nfev += 6
        y_new = ys_  # row 7 of the tableau equals the 5th-order solution
        err_vec = dt * sum(e * kk for e, kk in zip(_E, k) if e != 0.0)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((err_vec / scale) ** 2))
        if not np.isfinite(err):
            h *= 0.2
            rejected += 1
            continue
        if err <= 1.0:
            t = t + dt
            if direction * (t - t1) > -hmin:
                t = t1
            k1 = k[6]
            if project is not None:
                y_proj = project(y_new)
                if not np.array_equal(y_proj, y_new):
                    k1 = f(t, y_proj)
                    nfev += 1
                y_new = y_proj
            y = y_new
            ts.append(t)
            ys.append(y.copy())
            fac = 5.0 if err == 0 else min(5.0, 0.9 * err ** -0.2)
            h = min(max_step, h * fac)
        else:
            rejected += 1
            h *= max(0.2, 0.9 * err ** -0.2)
    else:
        raise StepSizeCollapse(f"exceeded {max_steps} steps")
    return ODESolution(np.array(ts), np.array(ys), nfev, rejected)


def _initial_step(f, t, y, f0, direction, rtol, atol) -> float:
    scale = atol + np.abs(y) * rtol
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y + direction * h0 * f0
    f1 = f(t + direction * h0, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1)
