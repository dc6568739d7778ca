import numpy as np
import pytest

from srn_mpis.network import goutsias, michaelis_menten, preset
from srn_mpis.projection import (MPModel, Projection, classify_reactions, default_basis,
                                 design_matrix, empirical_gram_schmidt, fit_mp, monomials,
                                 mp_process_paths, regression_rows)
from srn_mpis.simulate import TimeGrid, tl_paths
from srn_mpis.validate import orthonormality_errors

MM_X0 = (100, 100, 0, 0)


@pytest.fixture(scope="module")
def mm_fit():
    net = michaelis_menten()
    grid = TimeGrid.from_dt(1.0, 2**-4)
    paths = tl_paths(net, MM_X0, grid, 4000, seed=21)
    proj = Projection.canonical(4, 2)
    return net, grid, paths, proj, fit_mp(paths, grid, net, proj)


def test_michaelis_menten_classification():
    c = classify_reactions(michaelis_menten(), Projection.canonical(4, 2))
    assert c.regressed == (0,) and c.silent == ()
    assert set(c.closed_form) == {1, 2}
    np.testing.assert_array_equal(c.nu_bar[:, 0], [1, -1, -1])


def test_goutsias_classification():
    c = classify_reactions(goutsias(), Projection.canonical(6, 1))
    assert c.regressed == (4, 5, 6, 7, 8)
    assert set(c.closed_form) == {9} and c.closed_form[9] == ((0, 1),)
    assert c.silent == (0, 1, 2, 3)


def test_basis_and_monomials():
    e = default_basis()
    assert e.shape == (9, 2) and tuple(e[0]) == (0, 0) and tuple(e[-1]) == (2, 2)
    V = monomials(e, [0.5], [[4]], t_scale=1.0, s_scale=2.0)
    np.testing.assert_allclose(V[0], [0.5**i * 2.0**k for i, k in e])


def test_regression_rows_skip_final_time():
    grid = TimeGrid(1.0, 4)
    paths = np.arange(2 * 5 * 4).reshape(2, 5, 4)
    t, X, s = regression_rows(paths, grid, Projection.canonical(4, 2))
    assert t.size == 8 and np.array_equal(t[:4], [0, 0.25, 0.5, 0.75])
    np.testing.assert_array_equal(s[:, 0], X[:, 2])


def test_empirical_orthonormality():
    gram, normal = orthonormality_errors(M=10_000)
    assert gram <= 1e-8 and normal <= 1e-8


def test_coefficients_minimise_residual(mm_fit):
    net, grid, paths, proj, model = mm_fit
    t, X, s = regression_rows(paths, grid, proj)
    D = design_matrix(model.basis, paths, grid, proj)
    psi = net.propensities(X)[:, 0]
    c = model.coefficients[0]
    best = np.mean((psi - D @ c) ** 2)
    rng = np.random.default_rng(0)
    for _ in range(20):
        dc = 1e-3 * rng.choice([-1.0, 1.0], size=c.size)
        assert np.mean((psi - D @ (c + dc)) ** 2) > best
    # orthonormal basis: the normal equations are diagonal, so this is least squares
    lstsq = np.linalg.lstsq(D, psi, rcond=None)[0]
    np.testing.assert_allclose(c, lstsq, rtol=1e-7, atol=1e-10)


def test_fit_tracks_binned_conditional_mean(mm_fit):
    net, grid, paths, proj, model = mm_fit
    t, X, s = regression_rows(paths, grid, proj)
    a0 = net.propensities(X)[:, 0]
    checked = 0
    for tn in grid.times[:-1]:
        for c in np.unique(s[t == tn, 0]):
            rows = (t == tn) & (s[:, 0] == c)
            if rows.sum() < 500:
                continue
            fit = model.propensity(0, tn, [[c]])[0]
            assert abs(fit - a0[rows].mean()) <= 0.05 * a0[rows].mean()
            checked += 1
    assert checked >= 10


def test_identity_projection_reproduces_exact_rates():
    net = michaelis_menten()
    grid = TimeGrid.from_dt(1.0, 2**-3)
    paths = tl_paths(net, MM_X0, grid, 2000, seed=5)
    exps = np.array([[0, 0, 0, 0, 0], [0, 1, 0, 0, 0], [0, 0, 1, 0, 0], [0, 0, 0, 1, 0],
                     [0, 1, 1, 0, 0]])
    model = fit_mp(paths, grid, net, Projection(np.eye(4)), exps, regress_all=True)
    assert model.classification.regressed == (0, 1, 2)
    # E + C is conserved, so the C monomial is linearly dependent and dropped
    assert model.basis.dropped == [(0, 0, 0, 1, 0)]
    _, X, _ = regression_rows(paths, grid, Projection(np.eye(4)))
    t = np.tile(grid.times[:-1], 2000)
    for n in range(0, X.shape[0], 997):
        np.testing.assert_allclose(model.propensities(t[n], X[n:n + 1])[0], net.propensities(X[n:n + 1])[0],
                                   rtol=1e-6, atol=1e-9)


def test_model_round_trip_is_exact(mm_fit):
    *_, model = mm_fit
    back = MPModel.loads(model.dumps())
    s = np.arange(0, 40).reshape(-1, 1)
    for t in (0.0, 0.3, 0.97):
        assert np.array_equal(back.propensities(t, s), model.propensities(t, s))
    assert back.dumps() == model.dumps()
    with pytest.raises(ValueError):
        MPModel.from_dict({"format": "other"})


def test_clamp_and_extrapolation_counter(mm_fit):
    *_, model = mm_fit
    neg = MPModel.loads(model.dumps())
    neg.coefficients[0] = -np.abs(neg.coefficients[0])
    neg.coefficients[0][0] = -1e3
    assert np.all(neg.propensities(0.5, [[3], [10]])[:, 0] == 0.0)
    before = model.extrapolated_queries
    model.propensities(0.5, [[model.s_observed[1] + 5], [model.s_observed[0]]])
    assert model.extrapolated_queries == before + 1


def test_projected_paths(mm_fit):
    net, grid, paths, proj, model = mm_fit
    out = mp_process_paths(model, [0], grid, np.random.default_rng(0), M=50)
    assert out.shape == (50, grid.N + 1, 1) and (out >= 0).all() and (out[:, 0] == 0).all()
    final = mp_process_paths(model, [0], grid, np.random.default_rng(0), M=50, record=False)
    assert np.array_equal(final, out[:, -1])


def test_zero_rates_give_constant_projected_path(mm_fit):
    *_, model = mm_fit
    frozen = MPModel.loads(model.dumps())
    frozen.coefficients[0] = np.zeros_like(frozen.coefficients[0])
    # at C = 0 the closed-form channels vanish too
    out = mp_process_paths(frozen, [0], TimeGrid(1.0, 8), np.random.default_rng(1), M=10)
    assert (out == 0).all()


def test_gram_schmidt_needs_enough_rows():
    grid = TimeGrid(1.0, 1)
    with pytest.raises(ValueError):
        empirical_gram_schmidt(np.zeros((2, 2, 4)), grid, default_basis(), Projection.canonical(4, 2))


def test_goutsias_fit_is_finite():
    pr = preset("goutsias")
    grid = TimeGrid.from_dt(1.0, 2**-4)
    paths = tl_paths(pr.network, pr.x0, grid, 2000, seed=2)
    model = fit_mp(paths, grid, pr.network, Projection.canonical(6, pr.species))
    abar = model.propensities(0.5, np.arange(0, 15).reshape(-1, 1))
    assert np.isfinite(abar).all() and (abar >= 0).all()
    assert np.all(abar[:, :4] == 0)
