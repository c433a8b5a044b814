"""Command-line surface: fit, predict, simulate, evaluate, cv.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error
(including non-convergence of a requested fit).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .em import FitConfig, fit
from .errors import DataError, NumericError
from .io import (model_to_dict, parse_predictions_csv, parse_query_csv,
                 parse_subjects_csv, read_model_json, write_csv, write_json,
                 write_model_json)
from .metrics import (ValidationSet, d_tau, integrated_brier, l2_distance,
                      rmst_error, uno_c_index)
from .model import survival_grid
from .simulate import METHODS, ScenarioSpec, gen_target, run_replicates, summarize
from .sources import SourcePredictor, build_pseudo_samples, pool
from .tuning import TuneGrid, aic_select_r, cv_select_xi


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    """Parsed invocation: command, file paths, fit/tune settings."""

    command: str
    args: argparse.Namespace
    out: Path


def _build_parser() -> _Parser:
    parser = _Parser(prog="survtransfer",
                     description="Transformation survival models with "
                                 "prediction-based transfer from source studies")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_fit_inputs(p):
        p.add_argument("--target", required=True, help="subjects CSV")
        p.add_argument("--source-model", action="append", default=[],
                       help="model-export JSON (repeatable)")
        p.add_argument("--source-pred", action="append", default=[],
                       help="prediction-table CSV (repeatable)")
        p.add_argument("--source-n", action="append", type=int, default=[],
                       help="source sample sizes, aligned with the "
                            "tables-then-models order")

    def add_fit_options(p):
        p.add_argument("--quad-order", type=int, default=40)
        p.add_argument("--tol", type=float, default=1e-6)
        p.add_argument("--max-iter", type=int, default=5000)

    p_fit = sub.add_parser("fit", help="fit the penalized model")
    add_fit_inputs(p_fit)
    add_fit_options(p_fit)
    p_fit.add_argument("--xi", type=float, default=None)
    p_fit.add_argument("--cv", action="store_true", help="select xi by cross-validation")
    p_fit.add_argument("--r", type=float, default=None)
    p_fit.add_argument("--aic", action="store_true", help="select r by AIC")
    p_fit.add_argument("--folds", type=int, default=5)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--out", default=".")

    p_pred = sub.add_parser("predict", help="survival predictions from a model export")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--query", required=True, help="CSV: id,time,covariates")
    p_pred.add_argument("--curve", action="store_true",
                        help="emit the full step-resolved curve per query row")
    p_pred.add_argument("--out", default=".")

    p_sim = sub.add_parser("simulate", help="run simulation replicates")
    p_sim.add_argument("--scenario", required=True)
    p_sim.add_argument("--reps", type=int, default=100)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--n-target", type=int, default=100)
    p_sim.add_argument("--n-source", type=int, default=1000)
    p_sim.add_argument("--n-validation", type=int, default=10000)
    p_sim.add_argument("--covariate-shift", default="none",
                       choices=["none", "source-beta", "validation-beta"])
    p_sim.add_argument("--mismatch", action="store_true",
                       help="4-covariate target vs 2-covariate source")
    p_sim.add_argument("--methods", default=",".join(METHODS))
    p_sim.add_argument("--workers", type=int, default=1)
    p_sim.add_argument("--out", default=".")

    p_eval = sub.add_parser("evaluate", help="score a fitted model")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--val", help="validation subjects CSV (no oracle metrics)")
    p_eval.add_argument("--scenario", help="generate an oracle validation set instead")
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--n-validation", type=int, default=10000)
    p_eval.add_argument("--tau", type=float, default=2.0)
    p_eval.add_argument("--out", default=".")

    p_cv = sub.add_parser("cv", help="cross-validation table for xi")
    add_fit_inputs(p_cv)
    p_cv.add_argument("--r", type=float, default=0.0)
    p_cv.add_argument("--folds", type=int, default=5)
    p_cv.add_argument("--seed", type=int, default=0)
    p_cv.add_argument("--xi-grid", default=None,
                      help="comma-separated candidate xi values")
    p_cv.add_argument("--out", default=".")
    return parser


def _parse_xi_grid(arg):
    if arg is None:
        return None
    try:
        return tuple(float(v) for v in arg.split(",") if v.strip())
    except ValueError as exc:
        raise UsageError(f"bad --xi-grid value: {arg!r}") from exc


def _load_sources(args, ids):
    """SourcePredictor list from --source-pred / --source-model flags."""
    sources = []
    sizes = list(args.source_n)
    for path in args.source_pred:
        table = parse_predictions_csv(path)
        if not sizes:
            raise UsageError(f"--source-n required for prediction table {path}")
        sources.append(SourcePredictor(sample_size=sizes.pop(0), table=table))
    for path in args.source_model:
        model, names, n = read_model_json(path)
        size = sizes.pop(0) if sizes else n
        sources.append(SourcePredictor(sample_size=size, export=model,
                                       covariate_names=names))
    if sizes:
        raise UsageError("more --source-n values than sources")
    return sources


def _build_atoms(args, subjects, ids):
    sources = _load_sources(args, ids)
    if not sources:
        return None
    return build_pseudo_samples(subjects, pool(sources), subject_ids=ids)


def cmd_fit(config: RunConfig) -> int:
    args = config.args
    subjects, ids = parse_subjects_csv(args.target)
    names = subjects[0].covariates.names
    atoms = _build_atoms(args, subjects, ids)

    if args.xi is not None and args.cv:
        raise UsageError("--xi and --cv are mutually exclusive")
    if args.r is not None and args.aic:
        raise UsageError("--r and --aic are mutually exclusive")
    if atoms is None and (args.cv or (args.xi or 0.0) > 0.0):
        raise UsageError("a penalized fit needs --source-pred or --source-model")

    report: dict = {"n": len(subjects)}
    grid = TuneGrid(folds=args.folds, seed=args.seed)
    if args.aic:
        r, aic_table = aic_select_r(subjects, grid)
        report["aic_table"] = [[rv, a] for rv, a in aic_table]
    else:
        r = args.r if args.r is not None else 0.0
    if args.cv:
        xi, cv_table = cv_select_xi(subjects, atoms, grid, r=r)
        report["cv_table"] = [[x, s] for x, s in cv_table]
    else:
        xi = args.xi if args.xi is not None else 0.0

    cfg = FitConfig(xi=xi, r=r, tol=args.tol, max_iter=args.max_iter,
                    quad_order=args.quad_order)
    result = fit(subjects, atoms or [], cfg)
    report.update(iterations=result.iterations, converged=result.converged,
                  final_objective=result.objective_trace[-1], xi=xi, r=r)
    write_model_json(config.out / "model.json", result.model, names, len(subjects))
    write_json(config.out / "report.json", report)
    if not result.converged:
        print("fit did not converge", file=sys.stderr)
        return 3
    return 0


def cmd_predict(config: RunConfig) -> int:
    args = config.args
    model, names, _ = read_model_json(args.model)
    ids, times, X, qnames = parse_query_csv(args.query)
    if set(names) - set(qnames):
        missing = sorted(set(names) - set(qnames))
        raise DataError(f"query is missing model covariates: {missing}")
    cols = [qnames.index(nm) for nm in names]
    X = X[:, cols]
    rows = []
    if args.curve:
        grid = np.concatenate([[0.0], model.intensity.times])
        surv = survival_grid(model, X, grid)
        for i, sid in enumerate(ids):
            rows.extend((sid, t, s) for t, s in zip(grid, surv[i]))
    else:
        for i, sid in enumerate(ids):
            s = survival_grid(model, X[i:i + 1], times[i:i + 1])[0, 0]
            rows.append((sid, times[i], s))
    write_csv(config.out / "predictions.csv", ["id", "time", "surv"], rows)
    return 0


def cmd_simulate(config: RunConfig) -> int:
    args = config.args
    spec = ScenarioSpec(id=args.scenario, n_target=args.n_target,
                        n_source=args.n_source, covariate_shift=args.covariate_shift,
                        covariate_mismatch=args.mismatch, seed=args.seed)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    rows = run_replicates(spec, args.reps, methods,
                          n_validation=args.n_validation, workers=args.workers)
    write_csv(config.out / "results.csv",
              ["replicate", "scenario", "method", "metric", "value"], rows)
    write_csv(config.out / "summary.csv",
              ["scenario", "method", "metric", "median", "mad"], summarize(rows))
    return 0


def cmd_evaluate(config: RunConfig) -> int:
    args = config.args
    model, names, _ = read_model_json(args.model)
    tau = args.tau
    if args.scenario:
        spec = ScenarioSpec(id=args.scenario, seed=args.seed)
        study = gen_target(spec, np.random.default_rng(spec.seed),
                           n=args.n_validation, censored=False, validation=True)
        val = ValidationSet(study.subjects, study.oracle)
        metrics = {"l2d": l2_distance(model, val, tau),
                   "dtau": d_tau(model, val, tau)}
    elif args.val:
        subjects, _ = parse_subjects_csv(args.val)
        val = ValidationSet(tuple(subjects))
        metrics = {}
    else:
        raise UsageError("evaluate needs --val or --scenario")
    metrics["cindex"] = uno_c_index(model, val, tau)
    metrics["ibs"] = integrated_brier(model, val, tau)
    metrics["rmst"] = rmst_error(model, val, tau)
    scenario = args.scenario if args.scenario else "data"
    rows = [(0, scenario, "model", k, v) for k, v in metrics.items()]
    write_csv(config.out / "metrics.csv",
              ["replicate", "scenario", "method", "metric", "value"], rows)
    return 0


def cmd_cv(config: RunConfig) -> int:
    args = config.args
    subjects, ids = parse_subjects_csv(args.target)
    atoms = _build_atoms(args, subjects, ids)
    if atoms is None:
        raise UsageError("cv needs --source-pred or --source-model")
    xi_grid = _parse_xi_grid(args.xi_grid)
    grid = TuneGrid(folds=args.folds, seed=args.seed) if xi_grid is None else \
        TuneGrid(xi_values=xi_grid, folds=args.folds, seed=args.seed)
    best_xi, table = cv_select_xi(subjects, atoms, grid, r=args.r)
    write_csv(config.out / "cv.csv", ["xi", "mean_ibs"], table)
    print(f"selected_xi={fmt_float(best_xi)}")
    return 0


def fmt_float(x: float) -> str:
    return repr(float(x))


_COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "simulate": cmd_simulate,
             "evaluate": cmd_evaluate, "cv": cmd_cv}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=getattr(logging, args.log_level))
        out = Path(getattr(args, "out", "."))
        out.mkdir(parents=True, exist_ok=True)
        config = RunConfig(command=args.command, args=args, out=out)
        return _COMMANDS[args.command](config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
