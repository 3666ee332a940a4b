"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 partial failure (some runs failed; listed in the summary JSON).
Standard output carries JSON only; logs go to standard error and their
level is read from ``CASG_LOG`` (error, warn, info, debug).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .baselines import cd_estimate, fd_estimate, fd_sample_set
from .casg import casg_sample_set
from .ecasg import ecasg_sample_set
from .errors import CasgError, ConfigError, NumericalError
from .global_model import FilterPolicy, framework_step
from .harness.config import dfo_config, load_json, sensitivity_config
from .harness.dfo import RunRecord, data_profile, dfo_run, select_best
from .harness.parallel import default_threads
from .harness.problems import NoisyFunction, make_problem, reference_hessian
from .harness.sensitivity import record_rows, sensitivity_experiment, summarize
from .history import EvaluationHistory
from .simplex_core import CurvatureSpec, difference_matrix, objective

log = logging.getLogger("casgrad")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 2, 3, 4

RECORD_FIELDS = ["problem", "method", "h", "seed", "sigma", "dim", "f0", "grad_evals", "init_evals",
                 "status", "error", "evals", "values"]


class StageError(Exception):
    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.cause = cause


# -- output helpers ---------------------------------------------------------


def _num(v):
    if isinstance(v, float):
        return repr(float(v))
    return "" if v is None else str(v)


def _clean(obj):
    """JSON-safe copy: numpy to builtins, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _emit(obj):
    sys.stdout.write(_dumps(obj))


def _csv_text(rows, fields) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        w.writerow([_num(row.get(k)) for k in fields])
    return buf.getvalue()


def _write_table(out: Path, stem: str, rows, fields, fmt: str) -> str:
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out / f"{stem}.json"
        path.write_text(_dumps([{k: r.get(k) for k in fields} for r in rows]))
    else:
        path = out / f"{stem}.csv"
        path.write_text(_csv_text(rows, fields))
    return path.name


def _record_row(r: RunRecord) -> dict:
    row = asdict(r)
    row["evals"] = " ".join(str(int(e)) for e in r.evals)
    row["values"] = " ".join(repr(float(v)) for v in r.values)
    return row


def read_records(path) -> list[RunRecord]:
    """Run records written by ``dfo`` (CSV or JSON)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read records {path}: {exc}") from exc
    if path.suffix == ".json":
        try:
            rows = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"records file {path} is not valid JSON") from exc
    else:
        rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    try:
        for row in rows:
            out.append(RunRecord(
                problem=row["problem"], method=row["method"], h=float(row["h"]), seed=int(row["seed"]),
                sigma=float(row["sigma"]), dim=int(row["dim"]), f0=float(row["f0"]),
                values=[float(v) for v in str(row["values"] or "").split()],
                evals=[int(v) for v in str(row["evals"] or "").split()],
                grad_evals=int(row["grad_evals"]), init_evals=int(row["init_evals"]),
                status=row["status"] or "ok", error=row["error"] or "",
            ))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed run record in {path}: {exc}") from exc
    return out


# -- subcommands ------------------------------------------------------------


def _config_or_empty(args) -> dict:
    return load_json(args.config) if args.config else {}


def _parse_point(text, dim):
    try:
        x = np.array([float(v) for v in str(text).split(",")])
    except ValueError as exc:
        raise ConfigError(f"cannot parse point {text!r}") from exc
    if x.size != dim:
        raise ConfigError(f"point has {x.size} coordinates, problem has {dim}")
    return x


def cmd_estimate(args, parser) -> int:
    cfg = _config_or_empty(args)
    unknown = set(cfg) - {"problem", "method", "sigma", "h", "at", "history", "seed", "smoothing", "filter"}
    if unknown:
        raise ConfigError(f"unknown estimate config keys {sorted(unknown)}")
    method = args.method or cfg.get("method")
    sigma = args.sigma if args.sigma is not None else cfg.get("sigma")
    h = args.h if args.h is not None else cfg.get("h")
    missing = [name for name, v in (("--method", method), ("--sigma", sigma), ("--h", h)) if v is None]
    if missing:
        parser.error(f"missing required option(s): {', '.join(missing)}")
    sigma, h = float(sigma), float(h)
    if sigma < 0 or h <= 0:
        raise ConfigError("sigma must be nonnegative and h positive")

    pspec = dict(cfg.get("problem") or {})
    if args.problem:
        pspec = {"name": args.problem}
    if args.k is not None:
        pspec["k"] = args.k
    if args.dim is not None:
        pspec["dim"] = args.dim
    if not pspec:
        raise ConfigError("no problem given (--problem or config 'problem')")
    pspec["sigma"] = sigma
    problem = make_problem(pspec)

    at = args.at if args.at is not None else cfg.get("at")
    if at is None:
        x0 = problem.x_start if problem.x_start is not None else np.zeros(problem.dim)
    elif isinstance(at, list):
        x0 = _parse_point(",".join(str(v) for v in at), problem.dim)
    else:
        x0 = _parse_point(at, problem.dim)

    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    f = NoisyFunction(problem, np.random.default_rng(seed), record=True)
    history_path = args.history or cfg.get("history")
    result = {"method": method, "problem": problem.name, "x0": x0, "sigma": sigma, "h": h, "seed": seed}

    if history_path:
        hist = EvaluationHistory.read_csv(history_path)
        if hist.dim != problem.dim:
            raise ConfigError(f"history dimension {hist.dim} does not match problem dimension {problem.dim}")
        if method not in ("casg", "ecasg", "fd", "global_grad"):
            raise ConfigError(f"method {method!r} cannot use a history")
        policy = FilterPolicy(**cfg.get("filter", {}))
        try:
            g, new_hist = framework_step(hist, policy, float(cfg.get("smoothing", 0.0)), method,
                                         max(sigma, 1e-12), h, f, x0)
        except NumericalError as exc:
            raise StageError("global-model", exc) from exc
        result["history_records_in"] = len(hist)
        result["history_records_out"] = len(new_hist)
    elif method == "cd":
        g, _ = cd_estimate(f, x0, h)
    elif method == "global_grad":
        raise ConfigError("global_grad needs --history")
    else:
        try:
            H = reference_hessian(problem, x0)
        except CasgError as exc:
            raise StageError("curvature", exc) from exc
        try:
            spec = CurvatureSpec(H, max(sigma, 1e-12), h)
            builder = {"casg": casg_sample_set, "ecasg": ecasg_sample_set, "fd": fd_sample_set}.get(method)
            if builder is None:
                raise ConfigError(f"unknown method {method!r}")
            sample = builder(spec, x0)[0]
            S = difference_matrix(sample)
            result["objective"] = objective(S, spec)
            result["difference_matrix"] = S
        except NumericalError as exc:
            raise StageError("sample-set", exc) from exc
        g, _ = fd_estimate(f, sample)

    if not np.all(np.isfinite(g)):
        raise StageError("evaluation", NumericalError("gradient estimate is not finite"))
    result["gradient"] = g
    result["sample_set"] = f.history.X
    result["values"] = f.history.y
    result["evaluations"] = f.evals
    _emit(result)
    return EXIT_OK


def _apply_seed(cfg, args):
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    return cfg


def cmd_sensitivity(args, parser) -> int:
    cfg = sensitivity_config(_apply_seed(_config_or_empty(args), args))
    records, sweep, toy = sensitivity_experiment(cfg, args.threads)
    out = Path(args.out)
    files = [
        _write_table(out, "sensitivity_records", record_rows(records),
                     ["problem", "method", "h", "point", "mse", "status", "error"], args.format),
    ]
    if sweep:
        files.append(_write_table(out, "sensitivity_sweep", sweep,
                                  ["problem", "n_model_points", "method", "h", "q25", "median", "q75", "status", "error"],
                                  args.format))
    if toy:
        files.append(_write_table(out, "toy_sweep", toy, ["k", "casg", "fd", "cd_noise", "ratio_fd_casg"], args.format))
    failures = [asdict(r) for r in records if r.status != "ok"]
    failures += [row for row in sweep if row.get("status") != "ok"]
    summary = {"command": "sensitivity", "seed": cfg["seed"], "summary": summarize(records),
               "failures": failures, "files": files}
    (out / "sensitivity_summary.json").write_text(_dumps(summary))
    _emit(summary)
    return EXIT_PARTIAL if failures else EXIT_OK


def _profiles(records, taus, budget):
    budgets = np.arange(0, int(math.floor(budget)) + 1, dtype=float)
    rows = []
    for sigma in sorted({r.sigma for r in records}):
        sub = [r for r in records if r.sigma == sigma]
        for tau in taus:
            curves = data_profile(sub, float(tau), budgets)
            for m in sorted(curves):
                for b, frac in zip(budgets, curves[m]):
                    rows.append({"sigma": sigma, "tau": float(tau), "method": m, "budget": float(b),
                                 "fraction": float(frac)})
    return rows


PROFILE_FIELDS = ["sigma", "tau", "method", "budget", "fraction"]


def cmd_dfo(args, parser) -> int:
    cfg = dfo_config(_apply_seed(_config_or_empty(args), args))
    records = dfo_run(cfg, args.threads)
    out = Path(args.out)
    files = [_write_table(out, "dfo_records", [_record_row(r) for r in records], RECORD_FIELDS, args.format)]
    best = select_best(records)
    files.append(_write_table(out, "dfo_profiles", _profiles(best, cfg["taus"], cfg["budget"]),
                              PROFILE_FIELDS, args.format))
    failures = [{"problem": r.problem, "method": r.method, "h": r.h, "seed": r.seed, "sigma": r.sigma,
                 "error": r.error} for r in records if r.status != "ok"]
    selected = sorted({(r.sigma, r.problem, r.method, r.h) for r in best})
    summary = {
        "command": "dfo",
        "seed": cfg["seed"],
        "runs": len(records),
        "selected_steps": [{"sigma": s, "problem": p, "method": m, "h": h} for s, p, m, h in selected],
        "failures": failures,
        "files": files,
    }
    (out / "dfo_summary.json").write_text(_dumps(summary))
    _emit(summary)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_profile(args, parser) -> int:
    cfg = _config_or_empty(args)
    unknown = set(cfg) - {"records", "taus", "budget", "select_best"}
    if unknown:
        raise ConfigError(f"unknown profile config keys {sorted(unknown)}")
    path = args.input or cfg.get("records")
    if not path:
        raise ConfigError("profile needs --input or config 'records'")
    records = read_records(path)
    taus = cfg.get("taus", [1e-1, 1e-3, 1e-5])
    if not isinstance(taus, list) or any(not 0 < float(t) < 1 for t in taus):
        raise ConfigError("taus must lie in (0, 1)")
    budget = float(cfg.get("budget", max((max(r.budgets(), default=0) for r in records), default=0)))
    if cfg.get("select_best", True):
        records = select_best(records)
    rows = _profiles(records, taus, budget)
    out = Path(args.out)
    name = _write_table(out, "profiles", rows, PROFILE_FIELDS, args.format)
    failed = sum(r.status != "ok" for r in records)
    summary = {"command": "profile", "records": len(records), "failed_runs": failed, "files": [name]}
    _emit(summary)
    return EXIT_OK


def _history_summary(hist: EvaluationHistory, files):
    return {
        "records": len(hist),
        "dim": hist.dim,
        "first_step": int(hist.steps[0]) if len(hist) else None,
        "last_step": int(hist.steps[-1]) if len(hist) else None,
        "files": files,
    }


def _write_history(hist: EvaluationHistory, out: Path, fmt: str) -> str:
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out / "history.json"
        path.write_text(_dumps([{"step": int(s), "x": x, "y": y} for s, x, y in zip(hist.steps, hist.X, hist.y)]))
    else:
        path = out / "history.csv"
        hist.write_csv(path)
    return path.name


def cmd_history_import(args, parser) -> int:
    if not args.input:
        raise ConfigError("history-import needs --input")
    hist = EvaluationHistory.read_csv(args.input)
    name = _write_history(hist, Path(args.out), args.format)
    out = _history_summary(hist, [name])
    out["command"] = "history-import"
    _emit(out)
    return EXIT_OK


def cmd_history_export(args, parser) -> int:
    cfg = _config_or_empty(args)
    unknown = set(cfg) - {"problem", "n", "seed"}
    if unknown:
        raise ConfigError(f"unknown history-export config keys {sorted(unknown)}")
    pspec = dict(cfg.get("problem") or {})
    if args.problem:
        pspec = {"name": args.problem}
    if args.dim is not None:
        pspec["dim"] = args.dim
    if args.k is not None:
        pspec["k"] = args.k
    if args.sigma is not None:
        pspec["sigma"] = args.sigma
    if not pspec:
        raise ConfigError("no problem given (--problem or config 'problem')")
    n = args.n if args.n is not None else int(cfg.get("n", 100))
    if n < 1:
        raise ConfigError("n must be positive")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    problem = make_problem(pspec)
    rng = np.random.default_rng(seed)
    f = NoisyFunction(problem, rng, record=True)
    f.batch(problem.sample_uniform(rng, n))
    name = _write_history(f.history, Path(args.out), args.format)
    out = _history_summary(f.history, [name])
    out["command"] = "history-export"
    out["problem"] = problem.name
    _emit(out)
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def _common(parser):
    parser.add_argument("--config", metavar="PATH", help="JSON configuration file")
    parser.add_argument("--seed", type=int, metavar="U64", help="seed override")
    parser.add_argument("--out", metavar="DIR", default=".", help="output directory (default: .)")
    parser.add_argument("--threads", type=int, metavar="N", default=None,
                        help="worker processes (default: logical cores)")
    parser.add_argument("--format", choices=("csv", "json"), default="csv", help="table format")


def _problem_flags(parser):
    parser.add_argument("--problem", help="problem name (quad_k, quadratic, ackley, rosenbrock, quartic_indef, colon)")
    parser.add_argument("--k", type=float, help="curvature of the quad_k toy problem")
    parser.add_argument("--dim", type=int, help="problem dimension")
    parser.add_argument("--sigma", type=float, help="noise standard deviation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="casgrad", description="Curvature-aligned simplex gradient toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="one gradient estimate")
    _common(p)
    _problem_flags(p)
    p.add_argument("--method", choices=("casg", "ecasg", "fd", "cd", "global_grad"))
    p.add_argument("--h", type=float, help="step bound (CD: step)")
    p.add_argument("--at", help="base point, comma separated")
    p.add_argument("--history", metavar="CSV", help="evaluation history; curvature then comes from the global model")
    p.set_defaults(func=cmd_estimate)

    for name, func, helptext in (
        ("sensitivity", cmd_sensitivity, "gradient-accuracy experiment"),
        ("dfo", cmd_dfo, "derivative-free optimization benchmark"),
    ):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("profile", help="data profiles from dfo run records")
    _common(p)
    p.add_argument("--input", metavar="PATH", help="dfo_records.csv or .json")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("history-import", help="validate and normalize an evaluation history CSV")
    _common(p)
    p.add_argument("--input", metavar="CSV", help="history CSV")
    p.set_defaults(func=cmd_history_import)

    p = sub.add_parser("history-export", help="sample a problem into an evaluation history")
    _common(p)
    _problem_flags(p)
    p.add_argument("--n", type=int, help="number of evaluations")
    p.set_defaults(func=cmd_history_export)
    return parser


def _setup_logging():
    level = os.environ.get("CASG_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(levels.get(level, logging.WARNING))
    if level not in levels:
        log.warning("unknown CASG_LOG level %r; using warn", level)


def main(argv=None) -> int:
    """Run one subcommand and return its exit code (usage errors give 2)."""
    _setup_logging()
    parser = build_parser()
    try:
        return _dispatch(parser, argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG


def _dispatch(parser, argv) -> int:
    args = parser.parse_args(argv)
    if args.threads is None:
        args.threads = default_threads()
    elif args.threads < 1:
        parser.error("--threads must be at least 1")
    log.info("running %s", args.command)
    try:
        return args.func(args, parser)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except StageError as exc:
        log.error("numerical failure in %s", exc)
        return EXIT_NUMERICAL
    except NumericalError as exc:
        log.error("numerical failure: %s: %s", type(exc).__name__, exc)
        return EXIT_NUMERICAL


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
