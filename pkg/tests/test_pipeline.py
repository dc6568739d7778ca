import csv
import json
import math

import numpy as np
import pytest
from scipy.stats import kurtosis as scipy_kurtosis

from srn_mpis.estimators import EstimatorReport
from srn_mpis.hjb import ValueFunctionGrid
from srn_mpis.io import read_grid, sha256_text
from srn_mpis.network import ReactionNetwork, michaelis_menten
from srn_mpis.pipeline import (SUMMARY_COLUMNS, ComparisonReport, ComparisonRow, PipelineConfig,
                               PipelineError, bernoulli_kurtosis, crude_proxy_squared_cv,
                               distribution_match_report, kurtosis_guard, pilot_bound,
                               run_pipeline)
from srn_mpis.projection import MPModel, Projection, fit_mp
from srn_mpis.simulate import TimeGrid, tl_paths
from srn_mpis.validate import birth_death

MM_X0 = (100, 100, 0, 0)


def mm_config(**kw):
    base = dict(network=michaelis_menten(), x0=MM_X0, T=1.0, species=2, threshold=22,
                fit_M=2000, pilot_M=200, M_fw=4000, dts=(2.0**-4,), crude_M=0, seed=3)
    return PipelineConfig(**(base | kw))


@pytest.fixture(scope="module")
def mm_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("mm")
    return out, run_pipeline(mm_config(tv_M_test=20_000), out)


def test_bernoulli_proxies():
    assert bernoulli_kurtosis(0.5) == 1.0 and crude_proxy_squared_cv(0.5) == 1.0
    assert bernoulli_kurtosis(1e-4) == pytest.approx(1e4, rel=1e-3)
    assert crude_proxy_squared_cv(0.0) == math.inf and bernoulli_kurtosis(0.0) == math.inf


def test_config_validation():
    with pytest.raises(ValueError):
        mm_config(dts=(0.3,))
    with pytest.raises(ValueError):
        mm_config(policy="hjb-full")
    with pytest.raises(ValueError):
        mm_config(policy="nope")
    with pytest.raises(ValueError):
        mm_config(x0=(1, 2))
    assert mm_config().crude_paths == 0 and mm_config(crude_M=None).crude_paths == 4000


def test_pilot_bound_covers_threshold():
    cfg = mm_config()
    assert pilot_bound(cfg, Projection.canonical(4, 2)) >= 2 * 22
    assert pilot_bound(cfg, None) >= 200


def test_mp_run_reduces_variance(mm_run):
    out, rep = mm_run
    row = rep.row(2.0**-4)
    assert row.is_report.mean > 0 and row.reduction > 100
    assert row.crude_report is None and row.agree_3se is None
    assert rep.diagnostics["distribution_tv"] < 0.1
    assert rep.grid.meta["lattice"] == "projected"


def test_run_directory_contents(mm_run):
    out, rep = mm_run
    for name in ("model.json", "grid.txt", "estimates.csv", "summary.csv", "summary.json",
                 "seeds.json"):
        assert (out / name).is_file()
    assert not (out / "failure.json").exists()
    with open(out / "summary.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == SUMMARY_COLUMNS and len(rows) == 2
    model = MPModel.loads((out / "model.json").read_text())
    assert model.dumps() == rep.model.dumps()
    assert np.array_equal(read_grid(out / "grid.txt").values, rep.grid.values)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["provenance"]["model_sha256"] == sha256_text((out / "model.json").read_text())
    assert summary["provenance"]["grid_sha256"] == sha256_text((out / "grid.txt").read_text())
    assert json.loads((out / "seeds.json").read_text())["seed"] == 3


def test_reusing_model_and_grid_reproduces_the_run(mm_run, tmp_path):
    out, rep = mm_run
    again = run_pipeline(mm_config(tv_M_test=20_000), tmp_path, model=rep.model, grid=rep.grid)
    assert again.summary_records() == rep.summary_records()
    assert (tmp_path / "summary.csv").read_bytes() == (out / "summary.csv").read_bytes()


def test_crude_policy_has_unit_reduction():
    rep = run_pipeline(mm_config(policy="crude", threshold=5, M_fw=3000, crude_M=3000))
    row = rep.row(2.0**-4)
    # s^2 = p (1 - p) M / (M - 1) for an indicator, so the ratio is (M - 1) / M
    assert row.reduction == pytest.approx(2999 / 3000, rel=1e-9)
    # separate substreams, same law
    assert row.agree_3se
    assert rep.model is None and rep.grid is None


def test_full_hjb_policy_on_birth_death():
    cfg = PipelineConfig(birth_death(), (0,), 1.0, 0, 8, policy="hjb-full", M_fw=20_000,
                         crude_M=20_000, dts=(2.0**-5,), pilot_M=200, seed=1)
    row = run_pipeline(cfg).row(2.0**-5)
    assert row.agree_3se and row.reduction > 10


def test_failure_names_the_stage(mm_run, tmp_path):
    _, rep = mm_run
    wrong = ValueFunctionGrid(np.array([3, 3]), np.array([1.0, 0.0]), np.ones((2, 16)))
    with pytest.raises(PipelineError) as info:
        run_pipeline(mm_config(), tmp_path, model=rep.model, grid=wrong)
    assert info.value.stage == "policy"
    assert json.loads((tmp_path / "failure.json").read_text())["stage"] == "policy"


def test_kurtosis_guard():
    flat = EstimatorReport.from_samples(np.ones(10))
    y = np.r_[np.zeros(98), 1.0, 2.0]
    spread = EstimatorReport.from_samples(y)
    k = scipy_kurtosis(y, fisher=False)
    rows = [ComparisonRow(0.5, flat, None, 1.0, 1.0, bernoulli_kurtosis(0.1)),
            ComparisonRow(0.25, spread, None, 1.0, 1.0, k + 1.0),
            ComparisonRow(0.125, spread, None, 1.0, 1.0, k - 1.0)]
    guard = kurtosis_guard(ComparisonReport("mp-mapped", rows, {}))
    assert guard == {0.5: "warn", 0.25: "pass", 0.125: "warn"}


def test_silent_projection_has_zero_tv():
    # only species 1 moves, so the projected coordinate is frozen in both processes
    net = ReactionNetwork([[0, 0]], [[0, 1]], [3.0])
    grid = TimeGrid.from_dt(1.0, 2**-3)
    paths = tl_paths(net, (4, 0), grid, 200, seed=0)
    model = fit_mp(paths, grid, net, Projection.canonical(2, 0))
    dm = distribution_match_report(model, net, (4, 0), grid, 1000, seed=0)
    assert dm.tv == 0.0 and dm.support.tolist() == [4] and dm.full.tolist() == [1.0]
