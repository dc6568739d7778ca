import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kurtosis as scipy_kurtosis

from srn_mpis.estimators import (EstimatorReport, FunctionObservable, IndicatorObservable,
                                 calibrate_bias_constant, confidence_constant, mc_estimate,
                                 merge_all, merge_reports, plan_tolerance)

samples = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=40)


def test_moments_match_numpy_and_scipy(rng):
    y = rng.gamma(0.5, 2.0, size=1000)
    r = EstimatorReport.from_samples(y)
    assert r.mean == pytest.approx(y.mean(), rel=1e-14)
    assert r.sample_variance == pytest.approx(y.var(ddof=1), rel=1e-12)
    assert r.kurtosis == pytest.approx(scipy_kurtosis(y, fisher=False, bias=True), rel=1e-12)
    assert r.squared_cv == pytest.approx(y.var(ddof=1) / y.mean() ** 2, rel=1e-12)
    assert r.ci_halfwidth == pytest.approx(1.959963984540054 * math.sqrt(y.var(ddof=1) / 1000))


def test_constant_samples():
    r = EstimatorReport.from_samples(np.ones(50))
    assert r.mean == 1 and r.sample_variance == 0 and r.squared_cv == 0
    assert math.isnan(r.kurtosis)


def test_zero_mean_indicator_reports_infinite_cv():
    r = mc_estimate(np.zeros((10, 1)), IndicatorObservable(0, 0.5))
    assert r.squared_cv == math.inf and r.cv_undefined


def test_bernoulli_half_statistics(rng):
    y = (rng.random(100_000) < 0.5).astype(float)
    r = EstimatorReport.from_samples(y)
    assert r.squared_cv == pytest.approx(1.0, rel=0.05)
    assert r.kurtosis == pytest.approx(1.0, rel=0.05)


def test_bernoulli_squared_cv_tracks_one_over_mean(rng):
    p = 0.05
    y = (rng.random(200_000) < p).astype(float)
    r = EstimatorReport.from_samples(y)
    assert r.squared_cv == pytest.approx(1 / r.mean - 1, rel=1e-3)


def test_ci_coverage(rng):
    p, covered = 0.3, 0
    for _ in range(200):
        r = EstimatorReport.from_samples((rng.random(400) < p).astype(float))
        covered += abs(r.mean - p) <= r.ci_halfwidth
    assert covered >= 180


def test_merge_identity_and_two_singletons():
    r = EstimatorReport.from_samples([1.0, 3.0, 4.0], tag="g")
    empty = EstimatorReport(tag="g")
    assert merge_reports(r, empty) == r and merge_reports(empty, r) == r
    m = merge_reports(EstimatorReport.from_samples([1.0]), EstimatorReport.from_samples([0.0]))
    assert m.mean == 0.5 and m.M == 2


def test_merge_equals_single_pass(rng):
    y = rng.normal(2.0, 3.0, size=100)
    whole = EstimatorReport.from_samples(y)
    parts = merge_all(EstimatorReport.from_samples(c) for c in np.array_split(y, 7))
    for f in ("mean", "s2", "s3", "s4"):
        assert getattr(parts, f) == pytest.approx(getattr(whole, f), rel=1e-12, abs=1e-9)
    assert parts.M == 100


@settings(max_examples=80, deadline=None)
@given(samples, samples, samples)
def test_merge_is_associative(a, b, c):
    ra, rb, rc = (EstimatorReport.from_samples(v) for v in (a, b, c))
    left = merge_reports(merge_reports(ra, rb), rc)
    right = merge_reports(ra, merge_reports(rb, rc))
    scale = max(1.0, max(abs(v) for v in a + b + c))
    for f, k in (("mean", 1), ("s2", 2), ("s3", 3), ("s4", 4)):
        tol = 1e-12 * scale**k * (len(a) + len(b) + len(c))
        assert getattr(left, f) == pytest.approx(getattr(right, f), rel=1e-12, abs=tol)


def test_merge_rejects_mismatched_configs():
    with pytest.raises(ValueError):
        merge_reports(EstimatorReport.from_samples([1.0], tag="a"),
                      EstimatorReport.from_samples([1.0], tag="b"))
    with pytest.raises(ValueError):
        merge_reports(EstimatorReport.from_samples([1.0], alpha=0.05),
                      EstimatorReport.from_samples([1.0], alpha=0.1))


def test_merge_sums_work_counters():
    a = EstimatorReport.from_samples([1.0, 2.0], work={"poisson_draws": 3})
    b = EstimatorReport.from_samples([1.0], work={"poisson_draws": 4, "x": 1})
    assert merge_reports(a, b).work == {"poisson_draws": 7, "x": 1}


def test_confidence_constant():
    assert round(confidence_constant(0.05), 2) == 1.96
    with pytest.raises(ValueError):
        confidence_constant(1.5)


def test_plan_tolerance():
    assert plan_tolerance(0.1, C_bias=1.0).dt_star == pytest.approx(0.05)
    # C^2 * 4 * Var / TOL^2 with Var = 1e-5 is 1.537, so two paths suffice
    assert plan_tolerance(0.01, 0.05, 1.0, 1e-5).M_star == 2
    assert plan_tolerance(0.01, 0.05, 1.0, 1e-2).M_star == 1537
    with pytest.raises(ValueError):
        plan_tolerance(0.0)


def test_bias_calibration_recovers_linear_constant():
    C = 0.7
    assert calibrate_bias_constant(1 + C * 0.1, 1 + C * 0.05, 0.1) == pytest.approx(C)


def test_observables():
    x = np.array([[3, 9], [3, 8]])
    np.testing.assert_array_equal(IndicatorObservable(1, 8)(x), [1.0, 0.0])
    np.testing.assert_array_equal(IndicatorObservable(1, 8, ">=")(x), [1.0, 1.0])
    assert FunctionObservable(lambda s: s[:, 0] * 2.0, "2x")(x).tolist() == [6.0, 6.0]
    with pytest.raises(ValueError):
        IndicatorObservable(0, 1, "!=")
    with pytest.raises(ValueError):
        mc_estimate(x[:1], IndicatorObservable(0, 1))
