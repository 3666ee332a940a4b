"""Gradient-estimation accuracy at random points of a problem's domain.

For a simplex method with difference matrix ``S`` at ``x`` the MSE is exact:
noise is additive and independent, so

    MSE = || S^{-T} (f(x + s_i) - f(x))_i - grad f(x) ||^2 + noise_error(S, sigma)

with noiseless ``f``. Central differences use the same split with variance
``d sigma^2 / (2 h^2)``. The global-model gradient is scored by its squared
distance to the true gradient.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..baselines import cd_noise_error, fd_sample_set
from ..casg import casg_sample_set, is_power_of_two
from ..ecasg import ecasg_sample_set
from ..errors import CasgError, NumericalError
from ..global_model import apply_filter, fit_rbf
from ..history import EvaluationHistory
from ..simplex_core import CurvatureSpec, difference_matrix, noise_error, objective, simplex_gradient
from .parallel import parallel_map
from .problems import Problem, make_problem, quad_k, reference_gradient, reference_hessian

__all__ = [
    "PointRecord",
    "simplex_mse",
    "cd_mse",
    "method_mse",
    "fit_global_model",
    "sensitivity_experiment",
    "summarize",
    "toy_sweep",
]


@dataclass
class PointRecord:
    problem: str
    method: str
    h: float
    point: int
    mse: float
    status: str = "ok"
    error: str = ""


def simplex_mse(problem: Problem, sample, g_true) -> float:
    S = difference_matrix(sample)
    vals = np.asarray(problem.f(sample.all_points()), dtype=float)
    bias = simplex_gradient(S, vals[1:] - vals[0]) - g_true
    return float(bias @ bias) + noise_error(S, problem.sigma)


def cd_mse(problem: Problem, x, h: float, g_true) -> float:
    d = x.size
    E = h * np.eye(d)
    vals = np.asarray(problem.f(np.vstack([x + E, x - E])), dtype=float)
    bias = (vals[:d] - vals[d:]) / (2 * h) - g_true
    return float(bias @ bias) + cd_noise_error(d, problem.sigma, h)


def _optimal_sample(H, sigma, h, x, kind):
    spec = CurvatureSpec(H, sigma, h)
    if kind == "fd":
        return fd_sample_set(spec, x)[0]
    if is_power_of_two(spec.dim):
        return casg_sample_set(spec, x)[0]
    return ecasg_sample_set(spec, x)[0]


def method_mse(method, problem, x, h, g_true, H_ref=None, model=None) -> float:
    """MSE of one method at ``x`` with step bound (or step) ``h``."""
    if method == "cd":
        return cd_mse(problem, x, h, g_true)
    if method == "global_grad":
        e = model.gradient(x) - g_true
        return float(e @ e)
    kind, source = method.split("_")
    H = H_ref if source == "exact" else model.hessian(x)
    return simplex_mse(problem, _optimal_sample(H, problem.sigma, h, x, kind), g_true)


def fit_global_model(problem: Problem, n: int, rng, smoothing=0.0, policy=None, x0=None):
    """RBF surrogate fitted to ``n`` noisy evaluations drawn uniformly from the domain."""
    X = problem.sample_uniform(rng, n)
    y = np.asarray(problem.f(X), dtype=float) + problem.sigma * rng.standard_normal(n)
    hist = EvaluationHistory.from_arrays(X, y)
    if policy is not None and x0 is not None:
        hist = apply_filter(hist, policy, x0)
    return fit_rbf(hist, smoothing)


def _needs_model(methods):
    return any(m.endswith("_rbf") or m == "global_grad" for m in methods)


def _problem_task(task):
    """All records for one problem; runs in a worker."""
    pi, pspec, cfg = task
    seed = cfg["seed"]
    problem = make_problem(pspec)
    methods = cfg["methods"]
    steps = cfg["steps"]
    rng_pts = np.random.default_rng((seed, pi, 0))
    points = problem.sample_uniform(rng_pts, cfg["n_points"])

    model = None
    model_error = ""
    if _needs_model(methods):
        try:
            model = fit_global_model(problem, cfg["n_model_points"], np.random.default_rng((seed, pi, 1)),
                                     float(cfg["smoothing"]))
        except CasgError as exc:
            model_error = f"{type(exc).__name__}: {exc}"

    records = []
    for j, x in enumerate(points):
        g_true = reference_gradient(problem, x)
        H_ref = reference_hessian(problem, x) if any(m.endswith("_exact") for m in methods) else None
        for m in methods:
            hs = [float("nan")] if m == "global_grad" else steps
            for h in hs:
                if model is None and (m.endswith("_rbf") or m == "global_grad") and model_error:
                    records.append(PointRecord(problem.name, m, h, j, math.nan, "failed", model_error))
                    continue
                try:
                    mse = method_mse(m, problem, x, h, g_true, H_ref, model)
                    records.append(PointRecord(problem.name, m, h, j, mse))
                except (CasgError, np.linalg.LinAlgError) as exc:
                    records.append(PointRecord(problem.name, m, h, j, math.nan, "failed",
                                               f"{type(exc).__name__}: {exc}"))

    sweep = []
    for n in cfg["n_points_sweep"]:
        sweep.extend(_sweep_rows(problem, pi, int(n), points, cfg))
    return records, sweep


def _sweep_rows(problem, pi, n, points, cfg):
    """casg_rbf (every step) and global_grad errors with a model on ``n`` points."""
    try:
        model = fit_global_model(problem, n, np.random.default_rng((cfg["seed"], pi, 2, n)), float(cfg["smoothing"]))
    except NumericalError as exc:
        return [{"problem": problem.name, "n_model_points": n, "method": "casg_rbf", "h": math.nan,
                 "status": "failed", "error": str(exc)}]
    rows = []
    per = {("global_grad", math.nan): []}
    for h in cfg["steps"]:
        per[("casg_rbf", h)] = []
    for x in points:
        g_true = reference_gradient(problem, x)
        for (m, h), acc in per.items():
            try:
                acc.append(method_mse(m, problem, x, h, g_true, model=model))
            except CasgError:
                acc.append(math.nan)
    for (m, h), acc in per.items():
        a = np.asarray(acc)
        a = a[np.isfinite(a)]
        q = np.percentile(a, [25, 50, 75]) if a.size else [math.nan] * 3
        rows.append({"problem": problem.name, "n_model_points": n, "method": m, "h": h,
                     "q25": float(q[0]), "median": float(q[1]), "q75": float(q[2]), "status": "ok", "error": ""})
    return rows


def summarize(records):
    """Per problem and method: the step with the lowest median MSE and its quartiles.

    Also reports the median over points of ``log2(MSE_method / MSE_casg_exact)``
    at each method's selected step, when ``casg_exact`` was run.
    """
    out = {}
    groups = {}
    for r in records:
        groups.setdefault((r.problem, r.method, _hkey(r.h)), []).append(r)
    best = {}
    for (p, m, h), rs in sorted(groups.items(), key=lambda kv: kv[0]):
        vals = np.array([r.mse for r in rs if r.status == "ok"])
        if vals.size == 0:
            continue
        med = float(np.median(vals))
        if (p, m) not in best or med < best[(p, m)][1]:
            best[(p, m)] = (h, med, vals, rs)
    for (p, m), (h, med, vals, rs) in sorted(best.items()):
        q25, q75 = np.percentile(vals, [25, 75])
        entry = {"h": None if h < 0 else h, "median": med, "q25": float(q25), "q75": float(q75),
                 "failures": sum(r.status != "ok" for r in rs)}
        ref = best.get((p, "casg_exact"))
        if ref is not None:
            ref_by_pt = {r.point: r.mse for r in ref[3] if r.status == "ok"}
            ratios = [math.log2(r.mse / ref_by_pt[r.point]) for r in rs
                      if r.status == "ok" and r.point in ref_by_pt and r.mse > 0 and ref_by_pt[r.point] > 0]
            entry["median_log2_ratio"] = float(np.median(ratios)) if ratios else math.nan
        out.setdefault(p, {})[m] = entry
    return out


def _hkey(h):
    return -1.0 if math.isnan(h) else h


def sensitivity_experiment(cfg: dict, threads: int | None = 1):
    """Run every configured problem; returns ``(records, sweep_rows, toy_rows)``.

    ``cfg`` is a validated sensitivity config.
    """
    tasks = [(i, p, cfg) for i, p in enumerate(cfg["problems"])]
    results = parallel_map(_problem_task, tasks, threads)
    records = [r for rs, _ in results for r in rs]
    sweep = [row for _, rows in results for row in rows]
    toy = []
    if cfg.get("toy"):
        t = cfg["toy"]
        toy = toy_sweep(t["ks"], float(t["sigma"]), float(t["h"]))
    return records, sweep, toy


def toy_sweep(ks, sigma: float, h: float, cd_offset: float | None = None):
    """Objectives of CASG and objective-optimal FD on ``k x^2 + y^2``.

    The central-difference column uses coordinate offsets ``cd_offset``
    (default ``h / 2``, so the two stencil points are ``h`` apart).
    """
    cd_offset = h / 2 if cd_offset is None else cd_offset
    rows = []
    for k in ks:
        p = quad_k(float(k), sigma)
        spec = CurvatureSpec(p.hess(np.zeros(2)), sigma, h)
        x0 = np.zeros(2)
        casg = casg_sample_set(spec, x0)[1]
        fd = fd_sample_set(spec, x0)[0]
        fd_obj = objective(difference_matrix(fd), spec)
        rows.append({
            "k": float(k),
            "casg": casg.objective_value,
            "fd": fd_obj,
            "cd_noise": cd_noise_error(2, sigma, cd_offset),
            "ratio_fd_casg": fd_obj / casg.objective_value,
        })
    return rows


def record_rows(records):
    return [asdict(r) for r in records]
