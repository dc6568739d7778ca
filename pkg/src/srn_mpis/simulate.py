"""Forward path simulation: explicit tau-leap and exact SSA, with reproducible streams.

All simulators operate on a batch of ``M`` paths at once; a single path is the
batch ``M = 1``. Randomness comes from an explicit ``numpy.random.Generator``.
Ensembles are split into fixed-size chunks, each with its own substream, so the
output depends only on ``(seed, purpose, chunk_size)`` and never on the number
of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .network import ReactionNetwork

DEFAULT_CHUNK = 8192
SSA_MAX_EVENTS = 10**8

# Stream purposes; distinct spawn keys give independent substreams for one seed.
PURPOSES = {"tl": 0, "is": 1, "crude": 2, "fit": 3, "test": 4, "mp": 5, "ssa": 6, "pilot": 7}


class SSAStepLimitError(RuntimeError):
    """Raised when an SSA path exceeds its event budget (likely a runaway network)."""


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")

    @classmethod
    def from_dt(cls, T: float, dt: float) -> "TimeGrid":
        N = T / dt
        if not math.isclose(N, round(N), rel_tol=0, abs_tol=1e-9):
            raise ValueError(f"dt={dt} does not divide T={T}")
        return cls(T, int(round(N)))

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt


@dataclass(frozen=True)
class RngStream:
    """Seed plus substream identifier; identical pairs give identical variates."""

    seed: int
    substream: tuple[int, ...] = ()

    def child(self, *key: int) -> "RngStream":
        return RngStream(self.seed, self.substream + tuple(int(k) for k in key))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed) & (2**64 - 1), spawn_key=self.substream)
        return np.random.Generator(np.random.PCG64(ss))


@dataclass
class WorkCounters:
    poisson_draws: int = 0
    propensity_evals: int = 0
    likelihood_updates: int = 0
    control_evals: int = 0

    def __iadd__(self, other: "WorkCounters"):
        self.poisson_draws += other.poisson_draws
        self.propensity_evals += other.propensity_evals
        self.likelihood_updates += other.likelihood_updates
        self.control_evals += other.control_evals
        return self

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _initial_batch(x0, M: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.int64)
    if (x0 < 0).any():
        raise ValueError("initial state must be nonnegative")
    return np.repeat(x0[None, :], M, axis=0)


def tau_leap_steps(net: ReactionNetwork, x0, grid: TimeGrid, rng: np.random.Generator,
                   M: int = 1, counters: WorkCounters | None = None) -> Iterator[np.ndarray]:
    """Yield the batch state ``(M, d)`` at ``t_0, ..., t_N`` (streaming mode)."""
    x = _initial_batch(x0, M)
    nu = net.nu
    dt = grid.dt
    yield x.copy()
    for _ in range(grid.N):
        a = net.propensities(x)
        p = rng.poisson(a * dt)
        x = np.maximum(x + p @ nu, 0)
        if counters is not None:
            counters.poisson_draws += p.size
            counters.propensity_evals += M
        yield x.copy()


def tau_leap_paths(net: ReactionNetwork, x0, grid: TimeGrid, rng: np.random.Generator,
                   M: int = 1, record: bool = True,
                   counters: WorkCounters | None = None) -> np.ndarray:
    """Explicit tau-leap ensemble.

    Returns full paths of shape ``(M, N + 1, d)`` when ``record`` is set, else the
    final states ``(M, d)``. Each step fires one Poisson count per reaction with
    the propensity frozen at the left endpoint and clips negatives to zero.
    """
    steps = tau_leap_steps(net, x0, grid, rng, M, counters)
    if record:
        return np.stack(list(steps), axis=1)
    for x in steps:
        pass
    return x


def tau_leap_path(net: ReactionNetwork, x0, grid: TimeGrid, stream: RngStream) -> np.ndarray:
    """Single tau-leap path, shape ``(N + 1, d)``."""
    return tau_leap_paths(net, x0, grid, stream.generator(), M=1)[0]


def ssa_final_states(net: ReactionNetwork, x0, T: float, rng: np.random.Generator,
                     M: int = 1, max_events: int = SSA_MAX_EVENTS) -> np.ndarray:
    """Exact Gillespie direct-method samples of ``X(T)`` for ``M`` paths."""
    x = _initial_batch(x0, M)
    t = np.zeros(M)
    active = np.arange(M)
    events = 0
    nu = net.nu
    while active.size:
        a = net.propensities(x[active])
        a0 = a.sum(axis=1)
        alive = a0 > 0
        tau = np.full(active.size, np.inf)
        tau[alive] = rng.exponential(1.0 / a0[alive])
        t_new = t[active] + tau
        fire = t_new <= T
        idx = active[fire]
        if idx.size:
            u = rng.random(idx.size) * a0[fire]
            cum = np.cumsum(a[fire], axis=1)
            j = np.minimum((cum < u[:, None]).sum(axis=1), net.J - 1)
            x[idx] += nu[j]
            t[idx] = t_new[fire]
        active = idx
        events += 1
        if events > max_events:
            raise SSAStepLimitError(f"SSA exceeded {max_events} events per path")
    return x


def ssa_exact_path(net: ReactionNetwork, x0, T: float, stream: RngStream,
                   max_events: int = SSA_MAX_EVENTS) -> np.ndarray:
    return ssa_final_states(net, x0, T, stream.generator(), M=1, max_events=max_events)[0]


def chunk_sizes(M: int, chunk_size: int = DEFAULT_CHUNK) -> list[int]:
    full, rest = divmod(M, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def map_chunks(fn: Callable[[np.random.Generator, int, int], object], M: int,
               stream: RngStream, chunk_size: int = DEFAULT_CHUNK,
               threads: int = 1) -> list:
    """Run ``fn(rng, chunk_index, size)`` over the fixed chunking of ``M`` paths.

    Results come back in chunk order regardless of ``threads``.
    """
    sizes = chunk_sizes(M, chunk_size)

    def run(k):
        return fn(stream.child(k).generator(), k, sizes[k])

    if threads <= 1 or len(sizes) <= 1:
        return [run(k) for k in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, range(len(sizes))))


def tl_final_states(net: ReactionNetwork, x0, grid: TimeGrid, M: int, seed: int,
                    purpose: str = "tl", chunk_size: int = DEFAULT_CHUNK,
                    threads: int = 1, counters: WorkCounters | None = None) -> np.ndarray:
    """Final tau-leap states for ``M`` paths on chunked substreams, shape ``(M, d)``."""
    stream = RngStream(seed, (PURPOSES[purpose],))

    def fn(rng, k, size):
        c = WorkCounters()
        out = tau_leap_paths(net, x0, grid, rng, size, record=False, counters=c)
        return out, c

    res = map_chunks(fn, M, stream, chunk_size, threads)
    if counters is not None:
        for _, c in res:
            counters += c
    return np.concatenate([r[0] for r in res]) if res else np.empty((0, net.d), np.int64)


def tl_paths(net: ReactionNetwork, x0, grid: TimeGrid, M: int, seed: int,
             purpose: str = "fit", chunk_size: int = DEFAULT_CHUNK,
             threads: int = 1, counters: WorkCounters | None = None) -> np.ndarray:
    """Full tau-leap paths for ``M`` paths, shape ``(M, N + 1, d)``."""
    stream = RngStream(seed, (PURPOSES[purpose],))

    def fn(rng, k, size):
        c = WorkCounters()
        return tau_leap_paths(net, x0, grid, rng, size, record=True, counters=c), c

    res = map_chunks(fn, M, stream, chunk_size, threads)
    if counters is not None:
        for _, c in res:
            counters += c
    return np.concatenate([r[0] for r in res])


def ssa_samples(net: ReactionNetwork, x0, T: float, M: int, seed: int,
                chunk_size: int = DEFAULT_CHUNK, threads: int = 1,
                max_events: int = SSA_MAX_EVENTS) -> np.ndarray:
    stream = RngStream(seed, (PURPOSES["ssa"],))
    res = map_chunks(lambda rng, k, size: ssa_final_states(net, x0, T, rng, size, max_events),
                     M, stream, chunk_size, threads)
    return np.concatenate(res)
