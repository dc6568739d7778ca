"""Self-check suites: analytic and DP oracles, basis identities, IS unbiasedness."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from .estimators import IndicatorObservable, mc_estimate
from .hjb import (HJBConfig, Lattice, LatticeSystem, SigmoidFinal, dp_value_oracle,
                  solve_hjb_backward)
from .importance import ScaledPolicy, crude_mc_estimate, is_mc_estimate
from .network import ReactionNetwork, preset
from .projection import Projection, default_basis, design_matrix, empirical_gram_schmidt
from .simulate import TimeGrid, ssa_samples, tl_final_states, tl_paths

SUITES = ("oracles", "orthonormality", "unbiasedness")


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: float
    detail: str = ""

    def line(self) -> str:
        return (f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.value:.4g} "
                f"(limit {self.limit:.4g}) {self.detail}").rstrip()


def linear_death(theta: float = 1.0) -> ReactionNetwork:
    return ReactionNetwork([[1]], [[0]], [theta], ("X",))


def birth_death(birth: float = 2.0, death: float = 0.2) -> ReactionNetwork:
    return ReactionNetwork([[0], [1]], [[1], [0]], [birth, death], ("X",))


def check_ssa_death(M: int = 100_000, seed: int = 0) -> CheckResult:
    """SSA estimate of P(X(1) > 10) for X -> 0 from 20 against the Binomial(20, e^-1) tail."""
    x = ssa_samples(linear_death(), [20], 1.0, M, seed)
    rep = mc_estimate(x, IndicatorObservable(0, 10))
    exact = float(binom.sf(10, 20, math.exp(-1)))
    z = abs(rep.mean - exact) / rep.std_error
    return CheckResult("ssa linear death tail", z <= 3, z, 3,
                       f"estimate {rep.mean:.5f} exact {exact:.5f} (z-score)")


def check_ssa_birth(M: int = 100_000, seed: int = 0) -> CheckResult:
    """SSA mean of a pure birth process with rate 5 on [0, 1] against 5."""
    net = ReactionNetwork([[0]], [[1]], [5.0], ("X",))
    x = ssa_samples(net, [0], 1.0, M, seed)[:, 0]
    z = abs(x.mean() - 5.0) / (x.std(ddof=1) / math.sqrt(M))
    return CheckResult("ssa pure birth mean", z <= 3, z, 3, f"mean {x.mean():.4f} (z-score)")


def tl_death_bias(dt: float, M: int, seed: int = 0):
    """Tau-leap estimate of P(X(1) > 10) for linear death minus the exact tail, and its SE."""
    x = tl_final_states(linear_death(), [20], TimeGrid.from_dt(1.0, dt), M, seed)
    rep = mc_estimate(x, IndicatorObservable(0, 10))
    return rep.mean - float(binom.sf(10, 20, math.exp(-1))), rep.std_error


def check_tl_weak_order(M: int = 1_000_000, seed: int = 0) -> CheckResult:
    b4, se4 = tl_death_bias(2.0**-4, M, seed)
    b6, se6 = tl_death_bias(2.0**-6, M, seed)
    return CheckResult("tau-leap bias shrinks with dt", abs(b6) < abs(b4), abs(b6), abs(b4),
                       f"bias(2^-4)={b4:.2e}+-{se4:.1e} bias(2^-6)={b6:.2e}+-{se6:.1e}")


def dp_hjb_relative_gap(net: ReactionNetwork, s_max: int, final: SigmoidFinal, T: float = 1.0,
                        dt: float = 2.0**-10, p_max: int = 8):
    """Max per-state relative difference of u(0, .) between the DP oracle and the HJB solve."""
    dp = dp_value_oracle(net, final, TimeGrid.from_dt(T, dt), [s_max], p_max=p_max)
    lat = Lattice([s_max])
    table = net.propensities(lat.states)
    system = LatticeSystem(lat, net.nu, lambda t: table, time_dependent=False)
    vf = solve_hjb_backward(system, final, T, HJBConfig(s_max=s_max))
    u_hjb = vf.values_at(0.0)
    return float(np.max(np.abs(dp.values[0] - u_hjb) / u_hjb)), dp.tail_bound


def check_dp_hjb_birth_death(dt: float = 2.0**-10) -> CheckResult:
    gap, tail = dp_hjb_relative_gap(birth_death(), 30, SigmoidFinal.for_threshold(10), dt=dt)
    return CheckResult("DP vs HJB, birth-death s_max=30", gap <= 0.05, gap, 0.05,
                       f"Poisson tail bound {tail:.1e}")


def check_dp_hjb_death(dt: float = 2.0**-10) -> CheckResult:
    gap, tail = dp_hjb_relative_gap(linear_death(), 5, SigmoidFinal.for_threshold(2), dt=dt)
    return CheckResult("DP vs HJB, death chain x0=5", gap <= 0.05, gap, 0.05,
                       f"Poisson tail bound {tail:.1e}")


def orthonormality_errors(M: int = 10_000, dt: float = 2.0**-4, seed: int = 0):
    """Gram error and relative ``D^T D`` error on the Michaelis-Menten fit ensemble."""
    pr = preset("michaelis-menten")
    grid = TimeGrid.from_dt(pr.T, dt)
    paths = tl_paths(pr.network, pr.x0, grid, M, seed)
    proj = Projection.canonical(pr.network.d, pr.species)
    basis = empirical_gram_schmidt(paths, grid, default_basis(), proj)
    D = design_matrix(basis, paths, grid, proj)
    rows = grid.N * M
    DtD = D.T @ D
    gram_err = float(np.abs(DtD / rows - np.eye(basis.size)).max())
    normal_err = float(np.abs(DtD - rows * np.eye(basis.size)).max() / rows)
    return gram_err, normal_err


def check_orthonormality(M: int = 10_000, seed: int = 0) -> list[CheckResult]:
    gram, normal = orthonormality_errors(M, seed=seed)
    return [CheckResult("empirical Gram matrix = I", gram <= 1e-8, gram, 1e-8),
            CheckResult("D^T D = (T/dt) M I (relative)", normal <= 1e-8, normal, 1e-8)]


def check_is_unbiased(M: int = 100_000, seed: int = 0) -> list[CheckResult]:
    """Michaelis-Menten, dt = 2^-4, policy delta = 2a against crude tau-leap for P(C(1) > 5)."""
    pr = preset("michaelis-menten")
    grid = TimeGrid.from_dt(pr.T, 2.0**-4)
    g = IndicatorObservable(pr.species, 5)
    pol = ScaledPolicy(2.0)
    is_rep = is_mc_estimate(pr.network, pr.x0, grid, pol, g, M, seed)
    crude = crude_mc_estimate(pr.network, pr.x0, grid, g, M, seed)
    se = math.hypot(is_rep.std_error, crude.std_error)
    z = abs(is_rep.mean - crude.mean) / se
    ones = is_mc_estimate(pr.network, pr.x0, grid, pol, _One(), M, seed + 1)
    z1 = abs(ones.mean - 1.0) / ones.std_error
    return [CheckResult("IS (delta=2a) vs crude", z <= 3, z, 3,
                        f"IS {is_rep.mean:.5f} crude {crude.mean:.5f} (z-score)"),
            CheckResult("mean-one likelihood", z1 <= 3, z1, 3, f"mean {ones.mean:.5f} (z-score)")]


class _One:
    def __call__(self, x):
        return np.ones(np.asarray(x).shape[0])

    def describe(self):
        return "1"


def run_suite(name: str, quick: bool = False) -> list[CheckResult]:
    if name == "oracles":
        m = 10_000 if quick else 100_000
        out = [check_ssa_death(m), check_ssa_birth(m),
               check_dp_hjb_birth_death(2.0**-8 if quick else 2.0**-10),
               check_dp_hjb_death(2.0**-8 if quick else 2.0**-10)]
        if not quick:
            out.append(check_tl_weak_order())
        return out
    if name == "orthonormality":
        return check_orthonormality(2000 if quick else 10_000)
    if name == "unbiasedness":
        return check_is_unbiased(20_000 if quick else 100_000)
    raise ValueError(f"unknown suite {name!r}; choose from {SUITES} or 'all'")
