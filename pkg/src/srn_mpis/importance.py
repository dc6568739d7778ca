"""Importance-sampled tau-leap paths with pathwise likelihood ratios."""

from __future__ import annotations

import numpy as np

from .estimators import EstimatorReport, merge_all
from .network import ReactionNetwork
from .simulate import (DEFAULT_CHUNK, PURPOSES, RngStream, TimeGrid, WorkCounters,
                       _initial_batch, map_chunks, tau_leap_paths)

DELTA_FLOOR = 1e-12


class InadmissibleControlError(ValueError):
    """A control violates ``delta_j = 0  <=>  a_j = 0``."""


class ControlPolicy:
    """Maps ``(t, x)`` to per-reaction IS rates.

    Subclasses implement :meth:`raw_rates`; ``__call__`` enforces admissibility:
    zero where the propensity vanishes, at least ``delta_floor`` elsewhere.
    Policies are read-only after construction and safe to share across threads.
    """

    kind = "abstract"

    def __init__(self, delta_floor: float = DELTA_FLOOR):
        self.delta_floor = delta_floor

    def raw_rates(self, t: float, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, t: float, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        delta = self.raw_rates(t, x, a)
        return np.where(a > 0, np.maximum(delta, self.delta_floor), 0.0)

    def describe(self) -> dict:
        return {"kind": self.kind}


class CrudePolicy(ControlPolicy):
    """``delta = a``: the original measure, likelihood identically one."""

    kind = "crude"

    def __call__(self, t, x, a):
        return a

    def raw_rates(self, t, x, a):
        return a


class ScaledPolicy(ControlPolicy):
    """``delta = factor * a``; a deliberately suboptimal but admissible tilt."""

    kind = "scaled"

    def __init__(self, factor, delta_floor: float = DELTA_FLOOR):
        super().__init__(delta_floor)
        self.factor = np.asarray(factor, dtype=float)

    def raw_rates(self, t, x, a):
        return self.factor * a

    def describe(self):
        return {"kind": self.kind, "factor": self.factor.tolist()}


def log_likelihood_step(a, delta, p, dt: float) -> np.ndarray:
    """Log of one stepwise likelihood ratio; works on single vectors or ``(M, J)`` batches.

    Uses ``a_j / delta_j = 1`` when both vanish.
    """
    a = np.asarray(a, dtype=float)
    delta = np.asarray(delta, dtype=float)
    p = np.asarray(p)
    zero_a = a == 0
    if np.any((a > 0) & (delta <= 0)):
        raise InadmissibleControlError("delta_j must be positive where a_j > 0")
    if np.any(zero_a & (delta != 0)):
        raise InadmissibleControlError("delta_j must vanish where a_j = 0")
    safe_a = np.where(zero_a, 1.0, a)
    safe_d = np.where(zero_a, 1.0, delta)
    log_ratio = np.log(safe_a) - np.log(safe_d)
    return (-(a - delta).sum(axis=-1) * dt + (p * log_ratio).sum(axis=-1))


def likelihood_step(a, delta, p, dt: float) -> float:
    return float(np.exp(log_likelihood_step(a, delta, p, dt)))


def is_tau_leap_paths(net: ReactionNetwork, x0, grid: TimeGrid, policy: ControlPolicy,
                      rng: np.random.Generator, M: int = 1,
                      counters: WorkCounters | None = None):
    """IS tau-leap batch. Returns ``(final_states (M, d), log_likelihood (M,))``.

    Controls are evaluated at the left endpoint ``t_n`` of every step; the log
    likelihood is accumulated as a running sum.
    """
    x = _initial_batch(x0, M)
    logL = np.zeros(M)
    dt = grid.dt
    nu = net.nu
    for n in range(grid.N):
        t = n * dt
        a = net.propensities(x)
        delta = policy(t, x, a)
        p = rng.poisson(delta * dt)
        logL += log_likelihood_step(a, delta, p, dt)
        x = np.maximum(x + p @ nu, 0)
        if counters is not None:
            counters.poisson_draws += p.size
            counters.propensity_evals += M
            counters.control_evals += M
            counters.likelihood_updates += M
    return x, logL


def is_tau_leap_path(net, x0, grid, policy, stream: RngStream):
    """Single IS path: ``(final_state, likelihood)``."""
    x, logL = is_tau_leap_paths(net, x0, grid, policy, stream.generator(), 1)
    return x[0], float(np.exp(logL[0]))


def is_mc_estimate(net: ReactionNetwork, x0, grid: TimeGrid, policy: ControlPolicy, g,
                   M_fw: int, seed: int, purpose: str = "is", alpha: float = 0.05,
                   chunk_size: int = DEFAULT_CHUNK, threads: int = 1,
                   return_samples: bool = False):
    """IS Monte Carlo estimate over samples ``L_m * g(X_N[m])``.

    Per-chunk reports are merged in chunk order, so the result is independent of
    ``threads``.
    """
    if M_fw < 2:
        raise ValueError("need at least two paths")
    stream = RngStream(seed, (PURPOSES[purpose],))
    tag = f"{g.describe()}|dt={grid.dt!r}"

    def fn(rng, k, size):
        c = WorkCounters()
        x, logL = is_tau_leap_paths(net, x0, grid, policy, rng, size, c)
        y = np.exp(logL) * g(x)
        rep = EstimatorReport.from_samples(y, alpha, tag, c.as_dict())
        return rep, (y if return_samples else None)

    res = map_chunks(fn, M_fw, stream, chunk_size, threads)
    report = merge_all(r[0] for r in res)
    if return_samples:
        return report, np.concatenate([r[1] for r in res])
    return report


def crude_mc_estimate(net: ReactionNetwork, x0, grid: TimeGrid, g, M: int, seed: int,
                      purpose: str = "crude", alpha: float = 0.05,
                      chunk_size: int = DEFAULT_CHUNK, threads: int = 1) -> EstimatorReport:
    """Plain tau-leap estimate with the same chunked reduction as :func:`is_mc_estimate`."""
    stream = RngStream(seed, (PURPOSES[purpose],))
    tag = f"{g.describe()}|dt={grid.dt!r}"

    def fn(rng, k, size):
        c = WorkCounters()
        x = tau_leap_paths(net, x0, grid, rng, size, record=False, counters=c)
        return EstimatorReport.from_samples(g(x), alpha, tag, c.as_dict())

    return merge_all(map_chunks(fn, M, stream, chunk_size, threads))
