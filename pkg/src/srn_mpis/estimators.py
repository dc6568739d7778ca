"""Monte Carlo statistics, mergeable moment reports and tolerance planning."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from statistics import NormalDist
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class IndicatorObservable:
    """``g(x) = 1{x_i > threshold}``."""

    species: int
    threshold: float
    direction: str = ">"

    def __post_init__(self):
        if self.direction not in (">", ">=", "<", "<="):
            raise ValueError(f"unsupported direction {self.direction!r}")

    def __call__(self, x) -> np.ndarray:
        xi = np.asarray(x)[..., self.species]
        op = {">": np.greater, ">=": np.greater_equal, "<": np.less, "<=": np.less_equal}
        return op[self.direction](xi, self.threshold).astype(float)

    def describe(self) -> str:
        return f"1{{x[{self.species}] {self.direction} {self.threshold:g}}}"


@dataclass(frozen=True)
class FunctionObservable:
    fn: Callable[[np.ndarray], np.ndarray]
    name: str = "g"

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x)), dtype=float)

    def describe(self) -> str:
        return self.name


def confidence_constant(alpha: float = 0.05) -> float:
    """The ``1 - alpha/2`` standard normal quantile."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return NormalDist().inv_cdf(1 - alpha / 2)


@dataclass(frozen=True)
class EstimatorReport:
    """Sample moments of ``y_1..y_M`` stored as central sums so reports can be merged.

    ``s2, s3, s4`` are the sums of ``(y - mean)**k``. Derived statistics are
    properties; ``tag`` identifies the observable/config and must match on merge.
    """

    M: int = 0
    mean: float = 0.0
    s2: float = 0.0
    s3: float = 0.0
    s4: float = 0.0
    alpha: float = 0.05
    tag: str = ""
    work: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_samples(cls, y, alpha: float = 0.05, tag: str = "", work: dict | None = None):
        y = np.asarray(y, dtype=float).ravel()
        if y.size == 0:
            return cls(alpha=alpha, tag=tag, work=dict(work or {}))
        mean = float(np.mean(y))
        c = y - mean
        c2 = c * c
        return cls(int(y.size), mean, float(c2.sum()), float((c2 * c).sum()),
                   float((c2 * c2).sum()), alpha, tag, dict(work or {}))

    @property
    def sample_variance(self) -> float:
        return self.s2 / (self.M - 1) if self.M > 1 else math.nan

    @property
    def std_error(self) -> float:
        return math.sqrt(self.sample_variance / self.M) if self.M > 1 else math.nan

    @property
    def cv_undefined(self) -> bool:
        return self.mean == 0.0

    @property
    def squared_cv(self) -> float:
        # Zero-hit rare-event runs report +inf rather than raising.
        if self.mean == 0.0:
            return math.inf
        return self.sample_variance / self.mean**2

    @property
    def kurtosis(self) -> float:
        if self.s2 <= 0.0:
            return math.nan
        return self.M * self.s4 / self.s2**2

    @property
    def ci_halfwidth(self) -> float:
        return confidence_constant(self.alpha) * self.std_error

    def summary(self) -> dict:
        return {
            "M": self.M,
            "mean": self.mean,
            "variance": self.sample_variance,
            "squared_cv": self.squared_cv,
            "kurtosis": self.kurtosis,
            "ci_halfwidth": self.ci_halfwidth,
            "std_error": self.std_error,
            "cv_undefined": self.cv_undefined,
            "work": dict(self.work),
        }


def mc_estimate(final_states, g, alpha: float = 0.05, tag: str = "", work=None) -> EstimatorReport:
    """Crude estimator: statistics of ``g`` over final states ``(M, d)``."""
    y = g(np.asarray(final_states))
    if y.size < 2:
        raise ValueError("need at least two samples")
    return EstimatorReport.from_samples(y, alpha, tag, work)


def merge_reports(a: EstimatorReport, b: EstimatorReport) -> EstimatorReport:
    """Exact pooled moments of two disjoint sample sets (up to fourth order)."""
    if a.M == 0 or b.M == 0:
        return replace(a if b.M == 0 else b, work=_sum_work(a.work, b.work))
    if a.tag != b.tag or a.alpha != b.alpha:
        raise ValueError(f"cannot merge reports for different configs ({a.tag!r} vs {b.tag!r})")
    na, nb = a.M, b.M
    n = na + nb
    delta = b.mean - a.mean
    d_n = delta / n
    mean = a.mean + nb * d_n
    s2 = a.s2 + b.s2 + delta * d_n * na * nb
    s3 = (a.s3 + b.s3 + delta * d_n * d_n * na * nb * (na - nb)
          + 3.0 * d_n * (na * b.s2 - nb * a.s2))
    s4 = (a.s4 + b.s4
          + delta * d_n**3 * na * nb * (na * na - na * nb + nb * nb)
          + 6.0 * d_n * d_n * (na * na * b.s2 + nb * nb * a.s2)
          + 4.0 * d_n * (na * b.s3 - nb * a.s3))
    return EstimatorReport(n, mean, s2, s3, s4, a.alpha, a.tag, _sum_work(a.work, b.work))


def merge_all(reports) -> EstimatorReport:
    """Left fold in the given order; fixed order keeps results bit-reproducible."""
    reports = list(reports)
    out = reports[0] if reports else EstimatorReport()
    for r in reports[1:]:
        out = merge_reports(out, r)
    return out


def _sum_work(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0) + v
    return out


@dataclass(frozen=True)
class TolerancePlan:
    TOL: float
    alpha: float
    C_bias: float
    C_alpha: float
    variance: float
    dt_star: float
    M_star: int


def plan_tolerance(TOL: float, alpha: float = 0.05, C_bias: float = 1.0,
                   var_estimate: float = 0.0) -> TolerancePlan:
    """Split ``TOL`` evenly between bias and statistical error.

    ``dt* = TOL / (2 C_bias)`` and ``M* = ceil(C_alpha^2 * 4 Var / TOL^2)``.
    """
    if TOL <= 0 or C_bias <= 0 or var_estimate < 0:
        raise ValueError("need TOL > 0, C_bias > 0 and var_estimate >= 0")
    c = confidence_constant(alpha)
    m = math.ceil(c * c * 4.0 * var_estimate / TOL**2)
    return TolerancePlan(TOL, alpha, C_bias, c, var_estimate, TOL / (2.0 * C_bias), int(m))


def calibrate_bias_constant(mean_coarse: float, mean_fine: float, dt_coarse: float) -> float:
    """Richardson estimate of the weak-error constant from runs at ``dt`` and ``dt/2``.

    With ``bias(dt) ~ C dt`` the difference of the two means is ``C dt / 2``.
    """
    return 2.0 * abs(mean_coarse - mean_fine) / dt_coarse
