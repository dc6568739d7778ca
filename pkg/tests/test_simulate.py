import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binom, poisson

from srn_mpis.estimators import IndicatorObservable, mc_estimate
from srn_mpis.network import ReactionNetwork, goutsias, michaelis_menten
from srn_mpis.simulate import (RngStream, SSAStepLimitError, TimeGrid, WorkCounters, chunk_sizes,
                               map_chunks, ssa_exact_path, ssa_final_states, ssa_samples,
                               tau_leap_path, tau_leap_paths, tau_leap_steps, tl_final_states,
                               tl_paths)


def test_time_grid():
    g = TimeGrid.from_dt(1.0, 2**-4)
    assert g.N == 16 and g.dt == 2**-4
    assert g.times[0] == 0 and g.times[-1] == 1.0 and len(g.times) == 17
    with pytest.raises(ValueError):
        TimeGrid.from_dt(1.0, 0.3)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_path_shape_and_start(death):
    grid = TimeGrid.from_dt(1.0, 2**-4)
    path = tau_leap_path(death, [20], grid, RngStream(1))
    assert path.shape == (17, 1) and path[0, 0] == 20


def test_zero_propensity_path_is_constant():
    net = ReactionNetwork([[1, 1]], [[0, 0]], [3.0])
    path = tau_leap_path(net, [4, 0], TimeGrid(1.0, 8), RngStream(0))
    assert (path == [4, 0]).all()
    assert (ssa_exact_path(net, [4, 0], 1.0, RngStream(0)) == [4, 0]).all()


def test_same_seed_same_path_and_substreams_differ():
    net = goutsias()
    grid = TimeGrid.from_dt(1.0, 2**-5)
    x0 = (2, 6, 0, 0, 2, 0)
    a = tl_paths(net, x0, grid, 300, seed=9)
    b = tl_paths(net, x0, grid, 300, seed=9)
    c = tl_paths(net, x0, grid, 300, seed=10)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert not np.array_equal(RngStream(9, (1,)).generator().random(4),
                              RngStream(9, (2,)).generator().random(4))


def test_thread_count_does_not_change_results():
    net = michaelis_menten()
    grid = TimeGrid.from_dt(1.0, 2**-4)
    one = tl_final_states(net, (100, 100, 0, 0), grid, 5000, seed=3, chunk_size=700, threads=1)
    many = tl_final_states(net, (100, 100, 0, 0), grid, 5000, seed=3, chunk_size=700, threads=6)
    assert np.array_equal(one, many)


def test_chunking():
    assert chunk_sizes(10, 4) == [4, 4, 2]
    assert chunk_sizes(8, 4) == [4, 4]
    order = map_chunks(lambda rng, k, size: (k, size), 10, RngStream(0), 4, threads=3)
    assert order == [(0, 4), (1, 4), (2, 2)]


def test_streaming_matches_materialised():
    net = michaelis_menten()
    grid = TimeGrid.from_dt(1.0, 2**-3)
    full = tau_leap_paths(net, (100, 100, 0, 0), grid, np.random.default_rng(5), M=7)
    streamed = np.stack(list(tau_leap_steps(net, (100, 100, 0, 0), grid, np.random.default_rng(5), M=7)),
                        axis=1)
    assert np.array_equal(full, streamed)
    final = tau_leap_paths(net, (100, 100, 0, 0), grid, np.random.default_rng(5), M=7, record=False)
    assert np.array_equal(final, full[:, -1])


def test_work_counters():
    net = michaelis_menten()
    c = WorkCounters()
    tau_leap_paths(net, (100, 100, 0, 0), TimeGrid(1.0, 4), np.random.default_rng(0), M=10,
                   counters=c)
    assert c.poisson_draws == 4 * 10 * 3 and c.propensity_evals == 40


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.integers(0, 30), min_size=6, max_size=6),
       st.sampled_from([2**-2, 2**-3, 2**-4]))
def test_states_never_negative(seed, x0, dt):
    paths = tau_leap_paths(goutsias(), x0, TimeGrid.from_dt(1.0, dt), np.random.default_rng(seed), M=20)
    assert (paths >= 0).all()


def test_constant_rate_tau_leap_is_exactly_poisson(birth):
    # sum of N independent Poisson(5 dt) counts is Poisson(5); compare the CDF at fixed quantiles
    M = 20_000
    x = tl_final_states(birth, [0], TimeGrid.from_dt(1.0, 2**-3), M, seed=1)[:, 0]
    for q in (2, 4, 5, 7, 9):
        p = poisson.cdf(q, 5.0)
        se = math.sqrt(p * (1 - p) / M)
        assert abs((x <= q).mean() - p) < 4 * se


def test_tau_leap_death_mean(death):
    # 20 e^{-1} with an O(dt) allowance: the exact TL mean is 20 (1 - dt)^N
    x = tl_final_states(death, [20], TimeGrid.from_dt(1.0, 2**-8), 100_000, seed=2)[:, 0]
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - 20 * math.exp(-1)) < 3 * se + 20 * 2**-8


def test_ssa_death_binomial_tail(death):
    x = ssa_samples(death, [20], 1.0, 100_000, seed=4)
    rep = mc_estimate(x, IndicatorObservable(0, 10))
    assert abs(rep.mean - binom.sf(10, 20, math.exp(-1))) < 3 * rep.std_error
    # whole law, a few quantiles
    for k in (4, 7, 10):
        p = binom.cdf(k, 20, math.exp(-1))
        assert abs((x[:, 0] <= k).mean() - p) < 4 * math.sqrt(p * (1 - p) / x.shape[0])


def test_ssa_birth_mean(birth):
    x = ssa_samples(birth, [0], 1.0, 100_000, seed=5)[:, 0]
    assert abs(x.mean() - 5.0) < 3 * x.std(ddof=1) / math.sqrt(x.size)


def test_ssa_step_cap():
    net = ReactionNetwork([[0]], [[1]], [1e6])
    with pytest.raises(SSAStepLimitError):
        ssa_final_states(net, [0], 1.0, np.random.default_rng(0), M=1, max_events=1000)


def test_negative_initial_state_rejected(death):
    with pytest.raises(ValueError):
        tau_leap_path(death, [-1], TimeGrid(1.0, 2), RngStream(0))
