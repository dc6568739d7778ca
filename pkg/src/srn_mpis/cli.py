"""Command-line interface: ``srn-mpis <command> [options]``."""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .cost import UnitCosts, mp_cost_model
from .estimators import mc_estimate
from .hjb import HJBIntegrityError
from .importance import InadmissibleControlError
from .io import canonical_json, read_grid, save_grid, sha256_text, write_csv, write_json
from .network import PRESETS, preset
from .ode import StepSizeCollapse
from .pipeline import (POLICIES, PipelineError, build_policy, pilot_bound, run_pipeline,
                       solve_full_hjb, solve_projected_hjb)
from .projection import MPModel, Projection, classify_reactions, fit_mp
from .simulate import (SSAStepLimitError, TimeGrid, WorkCounters, ssa_samples, tl_final_states,
                       tl_paths)
from .validate import SUITES, run_suite

OUTPUT_ENV = "SRN_MPIS_OUTPUT_DIR"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_ACCEPTANCE = 4

NUMERIC_ERRORS = (StepSizeCollapse, HJBIntegrityError, InadmissibleControlError,
                  SSAStepLimitError, FloatingPointError, np.linalg.LinAlgError)


def _common(p: argparse.ArgumentParser, policy: bool = False) -> None:
    p.add_argument("-c", "--config", help="experiment config (YAML or JSON)")
    p.add_argument("--preset", choices=PRESETS, help="start from a built-in network")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. forward.M_fw=1000 (repeatable)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="worker threads (default: available CPUs)")
    p.add_argument("-o", "--out", help=f"output directory (default: ${OUTPUT_ENV} or ./runs)")
    if policy:
        p.add_argument("--policy", choices=POLICIES, help="importance-sampling control policy")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srn-mpis", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="tau-leap or SSA ensembles")
    _common(p)
    p.add_argument("--method", choices=["tau-leap", "ssa"])
    p.add_argument("--dt", type=float)
    p.add_argument("-M", "--paths", type=int, dest="M")
    p.add_argument("--final-only", action="store_true", help="write final states only")

    p = sub.add_parser("mp-fit", help="fit the Markovian projection")
    _common(p)

    p = sub.add_parser("hjb-solve", help="solve the reduced (or full) HJB system")
    _common(p, policy=True)
    p.add_argument("--model", help="fitted model.json (fitted on the fly when omitted)")

    p = sub.add_parser("is-run", help="importance-sampled forward runs from saved artifacts")
    _common(p, policy=True)
    p.add_argument("--model", help="model.json from mp-fit")
    p.add_argument("--grid", help="grid.txt from hjb-solve")

    p = sub.add_parser("pipeline", help="full MP-IS workflow with crude comparison")
    _common(p, policy=True)
    p.add_argument("--model", help="reuse a fitted model.json")
    p.add_argument("--grid", help="reuse a solved grid.txt")

    p = sub.add_parser("validate", help="run self-check suites")
    p.add_argument("--suite", choices=[*SUITES, "all"], default="all")
    p.add_argument("--quick", action="store_true", help="smaller sample sizes")

    p = sub.add_parser("cost-model", help="operation-count model of the MP construction")
    p.add_argument("--preset", choices=PRESETS, help="take J, d and #J_MP from a built-in network")
    p.add_argument("--measure", action="store_true",
                   help="also run the fitting ensemble of a preset and report measured counters")
    p.add_argument("--n-basis", type=int, default=9)
    p.add_argument("--dt", type=float, default=2.0**-4)
    p.add_argument("-M", "--paths", type=int, default=10_000, dest="M")
    p.add_argument("--M-fw", type=int, default=0)
    p.add_argument("--J", type=int, default=3)
    p.add_argument("--n-regressed", type=int, default=1)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--T", type=float, default=1.0)
    for name in ("poisson", "propensity", "polynomial", "likelihood", "control"):
        p.add_argument(f"--c-{name}", type=float, default=None)
    return parser


def _experiment(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "policy", None):
        overrides.append(f"forward.policy={args.policy}")
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    overrides.append(f"threads={threads}")
    if getattr(args, "dt", None) is not None:
        overrides.append(f"simulate.dt={args.dt!r}")
    if getattr(args, "M", None) is not None:
        overrides.append(f"simulate.M={args.M}")
    if getattr(args, "method", None):
        overrides.append(f"simulate.method={args.method}")
    if getattr(args, "final_only", False):
        overrides.append("simulate.record=final")
    return load_config(args.config, overrides, args.preset)


def _out_dir(args, exp: ExperimentConfig) -> Path:
    out = args.out or exp.output_dir or os.environ.get(OUTPUT_ENV) or "runs"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _provenance(exp: ExperimentConfig) -> dict:
    # the thread count and output location do not affect results
    doc = {k: v for k, v in exp.document.items() if k not in ("threads", "output_dir")}
    return {"config_sha256": sha256_text(canonical_json(doc)),
            "seed": exp.pipeline.seed,
            "versions": {"srn_mpis": __version__, "numpy": np.__version__,
                         "python": platform.python_version()}}


def cmd_simulate(args) -> int:
    exp = _experiment(args)
    cfg, sim = exp.pipeline, exp.simulate
    out = _out_dir(args, exp)
    net = cfg.network
    header = ["t", *net.species_names]
    counters = WorkCounters()
    if sim.method == "ssa":
        finals = ssa_samples(net, cfg.x0, cfg.T, sim.M, cfg.seed, threads=cfg.threads)
    else:
        grid = TimeGrid.from_dt(cfg.T, sim.dt)
        if sim.record == "paths":
            paths = tl_paths(net, cfg.x0, grid, sim.M, cfg.seed, purpose="tl",
                             threads=cfg.threads, counters=counters)
            pdir = out / "paths"
            pdir.mkdir(exist_ok=True)
            width = max(5, len(str(sim.M - 1)))
            for m, path in enumerate(paths):
                rows = [[repr(float(t)), *map(int, x)] for t, x in zip(grid.times, path)]
                write_csv(pdir / f"path_{m:0{width}d}.csv", header, rows)
            finals = paths[:, -1, :]
        else:
            finals = tl_final_states(net, cfg.x0, grid, sim.M, cfg.seed, purpose="tl",
                                     chunk_size=cfg.chunk_size, threads=cfg.threads,
                                     counters=counters)
    write_csv(out / "final_states.csv", net.species_names, finals.tolist())
    stats = {"M": int(sim.M), "method": sim.method, "dt": sim.dt if sim.method != "ssa" else None,
             "mean": finals.mean(axis=0).tolist(), "std": finals.std(axis=0).tolist(),
             "work": counters.as_dict()}
    if sim.M >= 2:
        stats["observable"] = mc_estimate(finals, cfg.observable).summary()
    write_json(out / "simulate.json", stats | {"provenance": _provenance(exp)})
    print(f"wrote {sim.M} {'paths' if sim.record == 'paths' and sim.method != 'ssa' else 'final states'}"
          f" to {out}")
    return EXIT_OK


def _fit(exp: ExperimentConfig) -> MPModel:
    cfg = exp.pipeline
    grid = TimeGrid.from_dt(cfg.T, cfg.fit_dt)
    paths = tl_paths(cfg.network, cfg.x0, grid, cfg.fit_M, cfg.seed, purpose="fit",
                     chunk_size=cfg.chunk_size, threads=cfg.threads)
    return fit_mp(paths, grid, cfg.network, Projection.canonical(cfg.network.d, cfg.species),
                  cfg.exponents)


def cmd_mp_fit(args) -> int:
    exp = _experiment(args)
    out = _out_dir(args, exp)
    model = _fit(exp)
    (out / "model.json").write_text(model.dumps())
    c = model.classification
    print(f"regressed reactions {list(c.regressed)}, closed form {sorted(c.closed_form)}, "
          f"silent {list(c.silent)}; basis size {model.basis.size}")
    print(f"wrote {out / 'model.json'}")
    return EXIT_OK


def cmd_hjb_solve(args) -> int:
    exp = _experiment(args)
    cfg = exp.pipeline
    out = _out_dir(args, exp)
    full = cfg.policy == "hjb-full"
    proj = None if full else Projection.canonical(cfg.network.d, cfg.species)
    s_max = cfg.hjb.s_max if cfg.hjb.s_max is not None else pilot_bound(cfg, proj)
    if full:
        grid = solve_full_hjb(cfg, s_max)
    else:
        model = MPModel.loads(Path(args.model).read_text()) if args.model else _fit(exp)
        grid = solve_projected_hjb(model, cfg, s_max)
    save_grid(grid, out / "grid.txt")
    print(f"solved on {grid.lattice.size} lattice states, {len(grid.time_nodes)} time nodes; "
          f"wrote {out / 'grid.txt'}")
    return EXIT_OK


def _load_artifacts(args):
    model = MPModel.loads(Path(args.model).read_text()) if getattr(args, "model", None) else None
    grid = read_grid(args.grid) if getattr(args, "grid", None) else None
    return model, grid


def cmd_is_run(args) -> int:
    exp = _experiment(args)
    cfg = exp.pipeline
    model, grid = _load_artifacts(args)
    build_policy(cfg, model, grid)  # fail early if the artifacts do not fit the policy
    report = run_pipeline(cfg, _out_dir(args, exp), model=model, grid=grid)
    print(report.table())
    return EXIT_OK


def cmd_pipeline(args) -> int:
    exp = _experiment(args)
    model, grid = _load_artifacts(args)
    out = _out_dir(args, exp)
    report = run_pipeline(exp.pipeline, out, model=model, grid=grid)
    print(report.table())
    print(f"artifacts in {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    suites = SUITES if args.suite == "all" else (args.suite,)
    ok = True
    for name in suites:
        print(f"== {name}")
        for res in run_suite(name, quick=args.quick):
            print(res.line())
            ok &= res.passed
    return EXIT_OK if ok else EXIT_ACCEPTANCE


def cmd_cost_model(args) -> int:
    units = UnitCosts(**{k: v for k, v in (
        ("poisson", args.c_poisson), ("propensity", args.c_propensity),
        ("polynomial", args.c_polynomial), ("likelihood", args.c_likelihood),
        ("control", args.c_control)) if v is not None})
    J, d, n_reg, measured = args.J, args.d, args.n_regressed, None
    if args.preset:
        pr = preset(args.preset)
        proj = Projection.canonical(pr.network.d, pr.species)
        J, d = pr.network.J, pr.network.d
        n_reg = len(classify_reactions(pr.network, proj).regressed)
        if args.measure:
            c = WorkCounters()
            tl_paths(pr.network, pr.x0, TimeGrid.from_dt(args.T, args.dt), args.M, 0, counters=c)
            measured = c.as_dict()
    elif args.measure:
        raise ConfigError("--measure needs --preset")
    report = mp_cost_model(args.n_basis, args.dt, args.M, J, n_reg, d,
                           T=args.T, M_fw=args.M_fw, units=units, measured=measured)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "mp-fit": cmd_mp_fit, "hjb-solve": cmd_hjb_solve,
    "is-run": cmd_is_run, "pipeline": cmd_pipeline, "validate": cmd_validate,
    "cost-model": cmd_cost_model,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, NUMERIC_ERRORS):
            return EXIT_NUMERIC
        if isinstance(exc.cause, (ConfigError, ValueError, KeyError)):
            return EXIT_CONFIG
        return EXIT_ERROR
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
