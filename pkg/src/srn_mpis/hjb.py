"""Value functions for the IS control problem: backward HJB solves, controls and a DP oracle.

The HJB system lives on a truncated box lattice ``{0..s_max}^k`` (``k = d`` for
small full networks, ``k = 1`` for a Markovian projection). Neighbour states
outside the box are clamped to the box.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.stats import poisson

from .importance import DELTA_FLOOR, ControlPolicy
from .network import ReactionNetwork
from .ode import dopri5
from .simulate import TimeGrid

U_FLOOR = 1e-30


class HJBIntegrityError(RuntimeError):
    pass


@dataclass(frozen=True)
class SigmoidFinal:
    """Smooth positive surrogate ``1 / (1 + exp(-b - beta_s * s_i))`` of an indicator."""

    b: float
    beta_s: float
    species: int = 0

    @classmethod
    def for_threshold(cls, threshold: float, slope: float = 4.0, species: int = 0) -> "SigmoidFinal":
        # Midpoint halfway between the lattice points threshold and threshold + 1.
        return cls(-slope * (threshold + 0.5), slope, species)

    def __call__(self, s) -> np.ndarray:
        z = self.b + self.beta_s * np.asarray(s, dtype=float)[..., self.species]
        return np.exp(-np.logaddexp(0.0, -z))

    def describe(self) -> str:
        return f"sigmoid(b={self.b:g}, beta={self.beta_s:g}, i={self.species})"


@dataclass(frozen=True)
class HJBConfig:
    """Lattice bound (``None`` picks one from a pilot run), floor and ODE controls."""

    s_max: int | tuple[int, ...] | None = None
    u_floor: float = U_FLOOR
    ode_rel_tol: float = 1e-6
    ode_abs_tol: float = 1e-9
    max_step: float = 2.0**-10

    def __post_init__(self):
        if self.u_floor <= 0 or self.ode_rel_tol <= 0 or self.ode_abs_tol <= 0 or self.max_step <= 0:
            raise ValueError("floor, tolerances and max_step must be positive")


class Lattice:
    """Enumerated box ``prod_k {0..bounds[k]}`` in row-major order."""

    def __init__(self, bounds):
        self.bounds = np.atleast_1d(np.asarray(bounds, dtype=np.int64))
        if (self.bounds < 0).any():
            raise ValueError("lattice bounds must be nonnegative")
        self.dim = self.bounds.size
        self.shape = tuple(int(b) + 1 for b in self.bounds)
        self.size = int(np.prod(self.shape))
        grids = np.meshgrid(*[np.arange(n) for n in self.shape], indexing="ij")
        self.states = np.stack([g.ravel() for g in grids], axis=1)
        self._strides = np.array([int(np.prod(self.shape[k + 1:])) for k in range(self.dim)],
                                 dtype=np.int64)

    def index(self, s) -> np.ndarray:
        """Flat index of (clamped) states ``s`` of shape ``(..., dim)``."""
        s = np.clip(np.asarray(s), 0, self.bounds)
        return (s.astype(np.int64) * self._strides).sum(axis=-1)

    def neighbours(self, nu_bar) -> np.ndarray:
        """``(K, J)`` flat indices of ``clamp(max(0, s + nu_bar_j))``."""
        nu_bar = np.asarray(nu_bar).reshape(-1, self.dim)
        return self.index(self.states[:, None, :] + nu_bar[None, :, :])


@dataclass
class LatticeSystem:
    """Propensities ``prop(t) -> (K, J)`` and jumps on a lattice: the HJB input."""

    lattice: Lattice
    nu_bar: np.ndarray
    prop: Callable[[float], np.ndarray]
    time_dependent: bool = True
    neighbours: np.ndarray = field(init=False)

    def __post_init__(self):
        self.nu_bar = np.asarray(self.nu_bar).reshape(-1, self.lattice.dim)
        self.neighbours = self.lattice.neighbours(self.nu_bar)

    @classmethod
    def from_network(cls, net: ReactionNetwork, bounds) -> "LatticeSystem":
        lat = Lattice(bounds if np.size(bounds) > 1 else [int(np.ravel(bounds)[0])] * net.d)
        if lat.dim != net.d:
            raise ValueError("full-network lattice needs one bound per species")
        table = net.propensities(lat.states)
        return cls(lat, net.nu, lambda t: table, time_dependent=False)


def hjb_rhs(u: np.ndarray, a: np.ndarray, neighbours: np.ndarray) -> np.ndarray:
    """``du/dt = -2 sum_j a_j (sqrt(u(s) u(s + nu_j)) - u(s))`` over the lattice."""
    if np.any(u < 0):
        raise HJBIntegrityError("negative value-function entry")
    return -2.0 * (a * (np.sqrt(u[:, None] * u[neighbours]) - u[:, None])).sum(axis=1)


@dataclass(frozen=True)
class ValueFunctionGrid:
    """Backward solution ``u(t, s)`` stored at decreasing times from ``T`` to ``0``.

    Queries interpolate linearly in time and clamp states to the box.
    """

    bounds: np.ndarray
    time_nodes: np.ndarray
    values: np.ndarray
    u_floor: float = U_FLOOR
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "lattice", Lattice(self.bounds))
        order = np.argsort(self.time_nodes, kind="stable")
        object.__setattr__(self, "_t_inc", np.asarray(self.time_nodes)[order])
        object.__setattr__(self, "_v_inc", np.asarray(self.values)[order])
        object.__setattr__(self, "_cache", lru_cache(maxsize=8192)(self._values_at))

    @property
    def T(self) -> float:
        return float(self._t_inc[-1])

    def _values_at(self, t: float) -> np.ndarray:
        tn = self._t_inc
        if t <= tn[0]:
            return self._v_inc[0]
        if t >= tn[-1]:
            return self._v_inc[-1]
        k = int(np.searchsorted(tn, t, side="right"))
        t0, t1 = tn[k - 1], tn[k]
        w = (t - t0) / (t1 - t0)
        out = (1 - w) * self._v_inc[k - 1] + w * self._v_inc[k]
        out.setflags(write=False)
        return out

    def values_at(self, t: float) -> np.ndarray:
        return self._cache(float(t))

    def __call__(self, t: float, s) -> np.ndarray:
        return self.values_at(t)[self.lattice.index(s)]


def solve_hjb_backward(system: LatticeSystem, final: Callable[[np.ndarray], np.ndarray],
                       T: float, cfg: HJBConfig = HJBConfig()) -> ValueFunctionGrid:
    """Integrate the HJB system from ``t = T`` down to ``0``.

    The terminal value is ``final(s)**2``, floored at ``cfg.u_floor`` like every
    later accepted step.
    """
    nbr = system.neighbours
    floor = cfg.u_floor

    def rhs(t, u):
        return hjb_rhs(u, system.prop(t), nbr)

    u_T = np.maximum(np.asarray(final(system.lattice.states), dtype=float) ** 2, floor)
    sol = dopri5(rhs, T, u_T, 0.0, rtol=cfg.ode_rel_tol, atol=cfg.ode_abs_tol,
                 max_step=cfg.max_step, project=lambda u: np.maximum(u, floor))
    meta = {"nfev": sol.nfev, "rejected": sol.n_rejected, "nodes": len(sol.t),
            "rtol": cfg.ode_rel_tol, "atol": cfg.ode_abs_tol, "max_step": cfg.max_step}
    return ValueFunctionGrid(system.lattice.bounds, sol.t, sol.y, floor, meta)


class ValueFunctionPolicy(ControlPolicy):
    """``delta_j(t, x) = a_j(x) sqrt(u(t, max(0, P(x + nu_j))) / u(t, P x))``.

    With ``projection=None`` the grid lives on the full state space.
    """

    def __init__(self, grid: ValueFunctionGrid, net: ReactionNetwork, projection=None,
                 delta_floor: float = DELTA_FLOOR):
        super().__init__(delta_floor)
        self.grid = grid
        self.P = None if projection is None else np.asarray(projection, dtype=float)
        self.kind = "hjb-full" if projection is None else "mp-mapped"
        # P is linear, so P(x + nu_j) = P x + P nu_j
        self.nu_bar = net.nu if self.P is None else np.rint(net.nu @ self.P.T).astype(np.int64)
        self.moving = np.flatnonzero(np.any(self.nu_bar != 0, axis=1))

    def _project(self, x):
        return x if self.P is None else np.rint(x @ self.P.T).astype(np.int64)

    def raw_rates(self, t, x, a):
        u = self.grid.values_at(t)
        lat = self.grid.lattice
        s = self._project(x)
        here = u[lat.index(s)]
        jumped = np.maximum(s[:, None, :] + self.nu_bar[None, self.moving, :], 0)
        there = u[lat.index(jumped)]
        delta = a.copy()
        delta[:, self.moving] *= np.sqrt(there / here[:, None])
        return delta

    def describe(self):
        return {"kind": self.kind, "grid_nodes": int(len(self.grid.time_nodes))}


def optimal_controls(grid: ValueFunctionGrid, net: ReactionNetwork, projection=None,
                     delta_floor: float = DELTA_FLOOR) -> ValueFunctionPolicy:
    return ValueFunctionPolicy(grid, net, projection, delta_floor)


class AlternativePolicy(ControlPolicy):
    """Controls of the projected process lifted to the full network.

    ``delta_j = abar_j(t, P x) sqrt(u(t, max(0, P x + P nu_j)) / u(t, P x))`` for
    reactions that move the projected coordinate; reactions with ``P nu_j = 0``
    keep their full propensity.
    """

    kind = "mp-alternative"

    def __init__(self, grid: ValueFunctionGrid, mp, net: ReactionNetwork,
                 delta_floor: float = DELTA_FLOOR):
        super().__init__(delta_floor)
        self.grid = grid
        self.mp = mp
        self.moves = np.any(mp.nu_bar != 0, axis=1)

    def raw_rates(self, t, x, a):
        u = self.grid.values_at(t)
        lat = self.grid.lattice
        s = self.mp.project(x)
        here = u[lat.index(s)]
        there = u[lat.index(np.maximum(s[:, None, :] + self.mp.nu_bar[None, :, :], 0))]
        abar = self.mp.propensities(t, s)
        delta = abar * np.sqrt(there / here[:, None])
        return np.where(self.moves, delta, a)


def alternative_controls(grid: ValueFunctionGrid, mp, net: ReactionNetwork,
                         delta_floor: float = DELTA_FLOOR) -> AlternativePolicy:
    return AlternativePolicy(grid, mp, net, delta_floor)


@dataclass
class DPResult:
    lattice: Lattice
    dt: float
    values: np.ndarray          # (N + 1, K), row n is u(n, .)
    tail_bound: float
    warnings: list


def dp_value_oracle(net: ReactionNetwork, g: Callable[[np.ndarray], np.ndarray], grid: TimeGrid,
                    bounds, p_max: int = 8, golden_iters: int = 32, sweeps: int = 2,
                    tail_tol: float = 1e-10) -> DPResult:
    """Discrete-time dynamic programming for the optimal second moment, small instances only.

    The infinite sum over firing vectors is truncated to ``p_j <= p_max`` and the
    infimum over ``delta`` is found by cyclic golden-section search in
    ``log delta``, vectorised over lattice states. ``u(N, x) = g(x)**2``.
    """
    lat = Lattice(bounds if np.size(bounds) > 1 else [int(np.ravel(bounds)[0])] * net.d)
    if lat.dim != net.d:
        raise ValueError("lattice must have one bound per species")
    if lat.size > 5000 or net.J > 3:
        raise ValueError("dp_value_oracle is meant for small instances (K <= 5000, J <= 3)")
    dt = grid.dt
    J = net.J
    a = net.propensities(lat.states)                           # (K, J)
    ps = np.array(list(itertools.product(range(p_max + 1), repeat=J)), dtype=np.int64)  # (P, J)
    dest = lat.index(np.maximum(lat.states[:, None, :] + (ps @ net.nu)[None, :, :], 0))  # (K, P)
    log_fact = np.array([math.lgamma(k + 1) for k in range(p_max + 1)])
    active = a > 0
    # firing vectors that are impossible for inactive reactions
    allowed = np.all(active[:, None, :] | (ps[None, :, :] == 0), axis=2)  # (K, P)
    log_c = np.where(active, np.log(np.where(active, dt * a * a, 1.0)), 0.0)   # (K, J)

    log_fact_p = log_fact[ps].sum(axis=1)                       # (P,)
    two_a = 2.0 * a.sum(axis=1)

    def objective(y, u_next):
        """log F(delta) per state, with y = log delta of shape (K, J)."""
        delta = np.where(active, np.exp(y), 0.0)
        expo = (delta.sum(axis=1) - two_a) * dt
        coef = np.where(active, log_c - y, 0.0)                  # (K, J)
        lw = np.where(allowed, coef @ ps.T - log_fact_p, -np.inf)  # (K, P)
        with np.errstate(divide="ignore"):
            lt = lw + np.log(u_next[dest])
        m = lt.max(axis=1)
        m = np.where(np.isfinite(m), m, 0.0)
        with np.errstate(divide="ignore"):
            return expo + m + np.log(np.exp(lt - m[:, None]).sum(axis=1))

    N = grid.N
    values = np.empty((N + 1, lat.size))
    values[N] = np.asarray(g(lat.states), dtype=float) ** 2
    gr = (math.sqrt(5) - 1) / 2
    half_width = math.log(50.0)
    tail = 0.0
    nbr = lat.neighbours(net.nu)
    for n in range(N - 1, -1, -1):
        u_next = values[n + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(u_next[:, None] > 0, u_next[nbr] / u_next[:, None], 1.0)
        # start from the continuous-time minimiser
        guess = np.where(active, a * np.sqrt(np.clip(ratio, 1e-300, 1e300)), 1.0)
        y = np.log(guess)
        for _ in range(sweeps):
            for j in range(J):
                if not active[:, j].any():
                    continue
                lo = y[:, j] - half_width
                hi = y[:, j] + half_width
                c1 = hi - gr * (hi - lo)
                c2 = lo + gr * (hi - lo)
                yt = y.copy()
                yt[:, j] = c1
                f1 = objective(yt, u_next)
                yt[:, j] = c2
                f2 = objective(yt, u_next)
                for _ in range(golden_iters):
                    left = f1 < f2
                    hi = np.where(left, c2, hi)
                    lo = np.where(left, lo, c1)
                    probe = np.where(left, hi - gr * (hi - lo), lo + gr * (hi - lo))
                    yt[:, j] = probe
                    fp = objective(yt, u_next)
                    c1, c2, f1, f2 = (np.where(left, probe, c2), np.where(left, c1, probe),
                                      np.where(left, fp, f2), np.where(left, f1, fp))
                y[:, j] = np.where(active[:, j], 0.5 * (lo + hi), y[:, j])
        logF = objective(y, u_next)
        # states whose reachable values all vanish have no minimiser: keep the guess
        y = np.where(np.isfinite(logF)[:, None], y, np.log(guess))
        values[n] = np.exp(logF)
        lam = np.where(active, dt * a * a / np.exp(y), 0.0)
        tail = max(tail, float(poisson.sf(p_max, lam).sum(axis=1).max()))
    warnings = []
    if tail > tail_tol:
        warnings.append(f"Poisson truncation tail {tail:.2e} exceeds {tail_tol:.0e}; raise p_max")
    return DPResult(lat, dt, values, tail, warnings)
