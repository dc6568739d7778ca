"""End-to-end MP-IS workflow: tau-leap ensemble, projection fit, reduced HJB solve,
control mapping and importance-sampled forward runs compared against crude tau-leap."""

from __future__ import annotations

import math
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .estimators import EstimatorReport, IndicatorObservable
from .hjb import (HJBConfig, Lattice, LatticeSystem, SigmoidFinal, ValueFunctionGrid,
                  alternative_controls, optimal_controls, solve_hjb_backward)
from .importance import CrudePolicy, crude_mc_estimate, is_mc_estimate
from .io import canonical_json, dump_grid, sha256_text, write_csv, write_json
from .network import ReactionNetwork
from .projection import MPModel, Projection, default_basis, fit_mp, mp_process_paths
from .simulate import (DEFAULT_CHUNK, PURPOSES, RngStream, TimeGrid, WorkCounters, map_chunks,
                       tl_final_states, tl_paths)

POLICIES = ("crude", "mp-mapped", "mp-alternative", "hjb-full")
ESTIMATE_COLUMNS = ("estimator", "dt", "M", "mean", "variance", "squared_cv", "kurtosis",
                    "ci_halfwidth", "wall_time", "poisson_draws")
SUMMARY_COLUMNS = ("dt", "M_fw", "is_mean", "is_variance", "is_squared_cv", "is_kurtosis",
                   "is_ci_halfwidth", "crude_M", "crude_mean", "crude_squared_cv",
                   "proxy_squared_cv", "reduction", "proxy_kurtosis", "kurtosis_guard",
                   "agree_3se")


class PipelineError(RuntimeError):
    """A stage failed; ``stage`` names it and ``__cause__`` holds the original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    network: ReactionNetwork
    x0: tuple
    T: float
    species: int
    threshold: float
    fit_M: int = 10_000
    fit_dt: float = 2.0**-4
    basis: tuple | None = None          # exponent pairs (i, k); None = {0,1,2}^2
    hjb: HJBConfig = HJBConfig()
    sigmoid_b: float | None = None
    sigmoid_beta: float = 4.0
    pilot_M: int = 1000
    M_fw: int = 100_000
    dts: tuple = (2.0**-6,)
    crude_M: int | None = None          # None = M_fw, 0 = skip the crude baseline
    alpha: float = 0.05
    seed: int = 0
    policy: str = "mp-mapped"
    threads: int = 1
    chunk_size: int = DEFAULT_CHUNK
    tv_M_test: int = 0                  # > 0 adds a surrogate histogram check

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; choose one of {POLICIES}")
        if len(self.x0) != self.network.d:
            raise ValueError(f"x0 has {len(self.x0)} entries for {self.network.d} species")
        if not 0 <= self.species < self.network.d:
            raise ValueError("observable species out of range")
        for dt in (self.fit_dt, *self.dts):
            TimeGrid.from_dt(self.T, dt)  # raises unless dt divides T
        if self.M_fw < 2 or self.fit_M < 2:
            raise ValueError("M_fw and fit_M must be at least 2")
        if self.policy == "hjb-full" and self.network.d > 2:
            raise ValueError("full-dimensional HJB is supported only for d <= 2")

    @property
    def crude_paths(self) -> int:
        return self.M_fw if self.crude_M is None else self.crude_M

    @property
    def observable(self) -> IndicatorObservable:
        return IndicatorObservable(self.species, self.threshold)

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k not in ("network", "hjb", "basis")}
        out["network"] = self.network.to_dict()
        out["hjb"] = asdict(self.hjb)
        out["basis"] = [list(e) for e in self.exponents]
        out["x0"] = [int(v) for v in self.x0]
        out["dts"] = [float(v) for v in self.dts]
        return out

    @property
    def exponents(self) -> np.ndarray:
        return default_basis() if self.basis is None else np.asarray(self.basis, dtype=np.int64)


@dataclass
class ComparisonRow:
    dt: float
    is_report: EstimatorReport
    crude_report: EstimatorReport | None
    proxy_squared_cv: float
    reduction: float
    proxy_kurtosis: float
    wall_time: dict = field(default_factory=dict)

    @property
    def agree_3se(self) -> bool | None:
        """IS and crude estimates within three combined standard errors."""
        if self.crude_report is None:
            return None
        se = math.hypot(self.is_report.std_error, self.crude_report.std_error)
        return abs(self.is_report.mean - self.crude_report.mean) <= 3 * se


@dataclass
class ComparisonReport:
    policy: str
    rows: list
    provenance: dict
    model: MPModel | None = None
    grid: ValueFunctionGrid | None = None
    diagnostics: dict = field(default_factory=dict)

    def row(self, dt: float) -> ComparisonRow:
        for r in self.rows:
            if r.dt == dt:
                return r
        raise KeyError(f"no row for dt={dt}")

    def summary_records(self) -> list[dict]:
        guard = kurtosis_guard(self)
        recs = []
        for r in self.rows:
            c = r.crude_report
            recs.append({
                "dt": r.dt, "M_fw": r.is_report.M, "is_mean": r.is_report.mean,
                "is_variance": r.is_report.sample_variance, "is_squared_cv": r.is_report.squared_cv,
                "is_kurtosis": r.is_report.kurtosis, "is_ci_halfwidth": r.is_report.ci_halfwidth,
                "crude_M": c.M if c else 0, "crude_mean": c.mean if c else math.nan,
                "crude_squared_cv": c.squared_cv if c else math.nan,
                "proxy_squared_cv": r.proxy_squared_cv, "reduction": r.reduction,
                "proxy_kurtosis": r.proxy_kurtosis, "kurtosis_guard": guard[r.dt],
                "agree_3se": r.agree_3se,
            })
        return recs

    def table(self) -> str:
        lines = [f"{'dt':>10} {'mean':>12} {'squared_cv':>12} {'kurtosis':>12} {'reduction':>12}"]
        for r in self.rows:
            lines.append(f"{r.dt:>10.6g} {r.is_report.mean:>12.4e} {r.is_report.squared_cv:>12.4e} "
                         f"{r.is_report.kurtosis:>12.4e} {r.reduction:>12.4e}")
        return "\n".join(lines)


def bernoulli_kurtosis(p: float) -> float:
    """Non-excess kurtosis of a Bernoulli(p) indicator, about ``1/p`` for small ``p``."""
    if not 0 < p < 1:
        return math.inf
    return (1 - 3 * p + 3 * p * p) / (p * (1 - p))


def crude_proxy_squared_cv(p: float) -> float:
    """Squared CV ``(1 - p) / p`` of one crude indicator sample."""
    return math.inf if p <= 0 else (1 - p) / p


def kurtosis_guard(report: ComparisonReport) -> dict:
    """``{dt: 'pass' | 'warn'}``; warn when the IS kurtosis is undefined or above the crude proxy."""
    out = {}
    for r in report.rows:
        k = r.is_report.kurtosis
        out[r.dt] = "pass" if math.isfinite(k) and k <= r.proxy_kurtosis else "warn"
    return out


def pilot_bound(cfg: PipelineConfig, proj: Projection | None) -> int:
    """``max(threshold, largest pilot state) * 2`` over the projected (or all) coordinates."""
    grid = TimeGrid.from_dt(cfg.T, cfg.fit_dt)
    paths = tl_paths(cfg.network, cfg.x0, grid, cfg.pilot_M, cfg.seed, purpose="pilot",
                     chunk_size=cfg.chunk_size, threads=cfg.threads)
    vals = paths if proj is None else np.rint(paths @ proj.matrix.T)
    return int(2 * max(math.ceil(cfg.threshold), int(vals.max())))


def solve_projected_hjb(model: MPModel, cfg: PipelineConfig, s_max: int) -> ValueFunctionGrid:
    lat = Lattice([s_max])
    system = LatticeSystem(lat, model.nu_bar, lambda t: model.propensities(t, lat.states))
    final = _final(cfg, 0)
    grid = solve_hjb_backward(system, final, cfg.T, cfg.hjb)
    grid.meta.update({"lattice": "projected", "s_max": s_max, "sigmoid": [final.b, final.beta_s]})
    return grid


def solve_full_hjb(cfg: PipelineConfig, s_max: int) -> ValueFunctionGrid:
    system = LatticeSystem.from_network(cfg.network, [s_max] * cfg.network.d)
    final = _final(cfg, cfg.species)
    grid = solve_hjb_backward(system, final, cfg.T, cfg.hjb)
    grid.meta.update({"lattice": "full", "s_max": s_max, "sigmoid": [final.b, final.beta_s]})
    return grid


def _final(cfg: PipelineConfig, species: int) -> SigmoidFinal:
    if cfg.sigmoid_b is None:
        return SigmoidFinal.for_threshold(cfg.threshold, cfg.sigmoid_beta, species)
    return SigmoidFinal(cfg.sigmoid_b, cfg.sigmoid_beta, species)


def build_policy(cfg: PipelineConfig, model: MPModel | None, grid: ValueFunctionGrid | None):
    if cfg.policy == "crude":
        return CrudePolicy()
    if grid is None:
        raise ValueError(f"policy {cfg.policy} needs a value-function grid")
    if cfg.policy == "hjb-full":
        if grid.lattice.dim != cfg.network.d:
            raise ValueError("hjb-full policy needs a full-dimensional grid")
        return optimal_controls(grid, cfg.network)
    if model is None:
        raise ValueError(f"policy {cfg.policy} needs a fitted MP model")
    if grid.lattice.dim != model.projection.dbar:
        raise ValueError("grid dimension does not match the projection")
    if cfg.policy == "mp-mapped":
        return optimal_controls(grid, cfg.network, model.projection.matrix)
    return alternative_controls(grid, model, cfg.network)


@dataclass
class DistributionMatch:
    support: np.ndarray        # integer bin centres
    full: np.ndarray           # relative occurrences under the full network
    surrogate: np.ndarray      # relative occurrences under the MP surrogate
    tv: float
    M_test: int


def distribution_match_report(model: MPModel, net: ReactionNetwork, x0, grid: TimeGrid,
                              M_test: int, seed: int, chunk_size: int = DEFAULT_CHUNK,
                              threads: int = 1) -> DistributionMatch:
    """Final-time histograms of the projected coordinate, full TL vs surrogate, and their TV distance."""
    full = tl_final_states(net, x0, grid, M_test, seed, purpose="test",
                           chunk_size=chunk_size, threads=threads)
    full_s = np.rint(full @ model.projection.matrix.T).astype(np.int64)[:, 0]
    s0 = np.rint(model.project(np.asarray(x0)[None, :])).astype(np.int64)[0]
    stream = RngStream(seed, (PURPOSES["mp"],))
    parts = map_chunks(lambda rng, k, size: mp_process_paths(model, s0, grid, rng, size, record=False),
                       M_test, stream, chunk_size, threads)
    sur_s = np.concatenate(parts)[:, 0]
    lo = int(min(full_s.min(), sur_s.min()))
    hi = int(max(full_s.max(), sur_s.max()))
    f = np.bincount(full_s - lo, minlength=hi - lo + 1) / M_test
    g = np.bincount(sur_s - lo, minlength=hi - lo + 1) / M_test
    return DistributionMatch(np.arange(lo, hi + 1), f, g, 0.5 * float(np.abs(f - g).sum()), M_test)


def run_pipeline(cfg: PipelineConfig, out_dir=None, model: MPModel | None = None,
                 grid: ValueFunctionGrid | None = None) -> ComparisonReport:
    """Run the off-line stage (unless ``model``/``grid`` are supplied) and the forward runs.

    With ``out_dir`` the run directory receives ``model.json``, ``grid.txt``,
    ``estimates.csv``, ``summary.csv``, ``summary.json`` and ``seeds.json``.
    A failing stage raises :class:`PipelineError` after writing what exists so far.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    state = {"model": model, "grid": grid, "rows": [], "diag": {}}
    net = cfg.network
    proj = Projection.canonical(net.d, cfg.species)
    needs_model = cfg.policy in ("mp-mapped", "mp-alternative")
    needs_grid = cfg.policy != "crude"
    stage = "setup"
    try:
        if needs_model and state["model"] is None:
            stage = "fit"
            fit_grid = TimeGrid.from_dt(cfg.T, cfg.fit_dt)
            c = WorkCounters()
            paths = tl_paths(net, cfg.x0, fit_grid, cfg.fit_M, cfg.seed, purpose="fit",
                             chunk_size=cfg.chunk_size, threads=cfg.threads, counters=c)
            state["model"] = fit_mp(paths, fit_grid, net, proj, cfg.exponents)
            state["diag"]["fit_work"] = c.as_dict()
            del paths
            _write_model(out, state["model"])
        if needs_grid and state["grid"] is None:
            stage = "hjb"
            full = cfg.policy == "hjb-full"
            s_max = cfg.hjb.s_max
            if s_max is None:
                s_max = pilot_bound(cfg, None if full else proj)
            s_max = int(np.max(s_max))
            state["grid"] = solve_full_hjb(cfg, s_max) if full else solve_projected_hjb(
                state["model"], cfg, s_max)
            _write_grid(out, state["grid"])
        if model is not None:
            _write_model(out, state["model"])
        if grid is not None:
            _write_grid(out, state["grid"])

        stage = "policy"
        policy = build_policy(cfg, state["model"], state["grid"])

        stage = "forward"
        g = cfg.observable
        for dt in cfg.dts:
            tgrid = TimeGrid.from_dt(cfg.T, dt)
            t0 = time.perf_counter()
            rep = is_mc_estimate(net, cfg.x0, tgrid, policy, g, cfg.M_fw, cfg.seed, purpose="is",
                                 alpha=cfg.alpha, chunk_size=cfg.chunk_size, threads=cfg.threads)
            wall = {"is": time.perf_counter() - t0}
            crude = None
            if cfg.crude_paths >= 2:
                t0 = time.perf_counter()
                crude = crude_mc_estimate(net, cfg.x0, tgrid, g, cfg.crude_paths, cfg.seed,
                                          alpha=cfg.alpha, chunk_size=cfg.chunk_size,
                                          threads=cfg.threads)
                wall["crude"] = time.perf_counter() - t0
            proxy = crude_proxy_squared_cv(rep.mean)
            scv = rep.squared_cv
            reduction = proxy / scv if scv > 0 and math.isfinite(proxy) else math.nan
            state["rows"].append(ComparisonRow(dt, rep, crude, proxy, reduction,
                                               bernoulli_kurtosis(rep.mean), wall))

        if cfg.tv_M_test > 0 and state["model"] is not None:
            stage = "distribution"
            dm = distribution_match_report(state["model"], net, cfg.x0,
                                           TimeGrid.from_dt(cfg.T, cfg.fit_dt), cfg.tv_M_test,
                                           cfg.seed, cfg.chunk_size, cfg.threads)
            state["diag"]["distribution_tv"] = dm.tv

        stage = "report"
        report = ComparisonReport(cfg.policy, state["rows"], _provenance(cfg, state),
                                  state["model"], state["grid"], state["diag"])
        if state["model"] is not None:
            report.diagnostics["extrapolated_queries"] = state["model"].extrapolated_queries
        if out is not None:
            write_run_directory(report, cfg, out)
        return report
    except Exception as exc:
        if out is not None:
            write_json(out / "failure.json", {"stage": stage, "error": type(exc).__name__,
                                              "message": str(exc)})
            if state["rows"]:
                _write_estimates(out, state["rows"])
        raise PipelineError(stage, exc) from exc


def _write_model(out, model):
    if out is not None and model is not None:
        (out / "model.json").write_text(model.dumps())


def _write_grid(out, grid):
    if out is not None and grid is not None:
        (out / "grid.txt").write_text(dump_grid(grid))


def _provenance(cfg: PipelineConfig, state) -> dict:
    model, grid = state["model"], state["grid"]
    return {
        "config_sha256": sha256_text(canonical_json(cfg.to_dict())),
        "model_sha256": sha256_text(model.dumps()) if model is not None else None,
        "grid_sha256": sha256_text(dump_grid(grid)) if grid is not None else None,
        "seed": cfg.seed,
        "substreams": {k: PURPOSES[k] for k in ("fit", "pilot", "is", "crude", "test", "mp")},
        "chunk_size": cfg.chunk_size,
        "versions": {"srn_mpis": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _write_estimates(out: Path, rows) -> None:
    recs = []
    for r in rows:
        for name, rep in (("is", r.is_report), ("crude", r.crude_report)):
            if rep is None:
                continue
            recs.append([name, repr(r.dt), rep.M, _fmt(rep.mean), _fmt(rep.sample_variance),
                         _fmt(rep.squared_cv), _fmt(rep.kurtosis), _fmt(rep.ci_halfwidth),
                         f"{r.wall_time.get(name, math.nan):.3f}",
                         rep.work.get("poisson_draws", 0)])
    write_csv(out / "estimates.csv", ESTIMATE_COLUMNS, recs)


def write_run_directory(report: ComparisonReport, cfg: PipelineConfig, out) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_model(out, report.model)
    _write_grid(out, report.grid)
    _write_estimates(out, report.rows)
    recs = report.summary_records()
    # wall-clock times are kept out of the summary so it is byte-reproducible
    write_csv(out / "summary.csv", SUMMARY_COLUMNS,
              [[_fmt(rec[c]) for c in SUMMARY_COLUMNS] for rec in recs])
    write_json(out / "summary.json", {
        "policy": report.policy,
        "rows": [rec | {"is": r.is_report.summary(),
                        "crude": r.crude_report.summary() if r.crude_report else None,
                        "wall_time": r.wall_time}
                 for rec, r in zip(recs, report.rows)],
        "diagnostics": report.diagnostics,
        "provenance": report.provenance,
        "config": cfg.to_dict(),
    })
    write_json(out / "seeds.json", {"seed": cfg.seed, "substreams": report.provenance["substreams"],
                                    "chunk_size": cfg.chunk_size})
