"""Derivative-free optimization with pluggable gradient estimators, and data profiles.

The optimizer is L-BFGS with a backtracking line search whose Armijo test is
relaxed by ``noise_allowance * sigma`` so noise alone cannot stall it. Budgets
are counted in simplex-gradient units: function evaluations divided by ``d``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..baselines import cd_estimate, fd_estimate
from ..errors import CasgError, ConfigError, EmptyRecordSet
from ..global_model import FilterPolicy, framework_step
from ..history import EvaluationHistory
from .parallel import parallel_map
from .problems import NoisyFunction, Problem, dfo_problem_set, make_problem, reference_hessian
from .sensitivity import _optimal_sample

__all__ = ["RunRecord", "GradientOracle", "lbfgs_run", "dfo_run", "select_best", "data_profile", "DESIGN_SIGMA_FLOOR"]

# CASG and FD need a positive noise level to size their steps; noiseless runs use this.
DESIGN_SIGMA_FLOOR = 1e-12


@dataclass
class RunRecord:
    problem: str
    method: str
    h: float
    seed: int
    sigma: float
    dim: int
    f0: float
    values: list = field(default_factory=list)  # best noiseless value after each iteration
    evals: list = field(default_factory=list)  # cumulative evaluations at each entry of values
    grad_evals: int = 0
    init_evals: int = 0
    status: str = "ok"
    error: str = ""

    def budgets(self) -> np.ndarray:
        return np.asarray(self.evals, dtype=float) / self.dim


class GradientOracle:
    """Gradient estimates for one method; keeps the evaluation history the global model needs."""

    def __init__(self, method, problem: Problem, f: NoisyFunction, h, rng, cfg):
        self.method = method
        self.problem = problem
        self.f = f
        self.h = float(h)
        self.design_sigma = max(problem.sigma, DESIGN_SIGMA_FLOOR)
        self.history = None
        self.init_evals = 0
        self.policy = FilterPolicy(**cfg.get("filter", {"mode": "nearest_k"}))
        self.smoothing = float(cfg.get("smoothing", 0.0))
        self.admit_line_search = bool(cfg.get("admit_line_search", False))
        if method.endswith("_rbf") or method == "global_grad":
            d = problem.dim
            n = int(cfg.get("init_per_dim", 100)) * d
            half = float(cfg.get("init_side", 2.0)) / 2
            X = problem.x_start[None, :] + rng.uniform(-half, half, size=(n, d))
            y = f.batch(X)
            self.history = EvaluationHistory.from_arrays(X, y)
            self.init_evals = n

    def observe(self, x, y):
        """Line-search evaluation; kept in the history only when configured."""
        if self.history is not None and self.admit_line_search:
            self.history.append(x, y)

    def __call__(self, x):
        """Returns ``(gradient, evaluations used)``."""
        m = self.method
        before = self.f.evals
        if m == "cd":
            g, _ = cd_estimate(self.f, x, self.h)
        elif m.endswith("_exact"):
            H = reference_hessian(self.problem, x)
            sample = _optimal_sample(H, self.design_sigma, self.h, x, m.split("_")[0])
            g, _ = fd_estimate(self.f, sample)
        else:
            estimator = {"casg_rbf": "ecasg", "fd_rbf": "fd", "global_grad": "global_grad"}[m]
            g, hist = framework_step(self.history, self.policy, self.smoothing, estimator,
                                     self.design_sigma, self.h, self.f, x)
            self.history = hist
        return g, self.f.evals - before


def _two_loop(g, pairs, gamma):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    r = gamma * q
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ r)
        r += s * (a - b)
    return -r


def lbfgs_run(problem: Problem, oracle, f: NoisyFunction, budget: float, memory: int = 10,
              armijo: float = 1e-4, noise_allowance: float = 2.0, max_backtracks: int = 30,
              count_init: bool = True, record: RunRecord | None = None) -> RunRecord:
    """Minimize ``problem`` from ``problem.x_start`` until ``budget`` simplex gradients are spent."""
    d = problem.dim
    x = problem.x_start.astype(float).copy()
    offset = oracle.init_evals if count_init else 0
    start_evals = f.evals
    rec = record or RunRecord(problem.name, getattr(oracle, "method", "custom"), getattr(oracle, "h", math.nan),
                              0, problem.sigma, d, float(problem.f(x)))
    rec.init_evals = oracle.init_evals
    best = float(problem.f(x))
    rec.values.append(best)
    rec.evals.append(offset)

    def used():
        return offset + f.evals - start_evals

    observe = getattr(oracle, "observe", None)
    pairs = deque(maxlen=memory)
    allowance = noise_allowance * problem.sigma
    g, n = oracle(x)
    rec.grad_evals += n
    fx = None
    while used() / d < budget:
        if not np.all(np.isfinite(g)):
            raise CasgError("gradient estimate is not finite")
        if pairs:
            s, y, _ = pairs[-1]
            gamma = (s @ y) / (y @ y)
        else:
            gamma = 1.0 / max(np.linalg.norm(g), 1e-300)
        p = _two_loop(g, list(pairs), gamma)
        slope = float(g @ p)
        if not slope < 0:
            pairs.clear()
            p = -g / max(np.linalg.norm(g), 1e-300)
            slope = float(g @ p)
            if not slope < 0:
                break
        if fx is None:
            fx = f(x)
            if observe is not None:
                observe(x, fx)
        alpha = 1.0
        accepted = False
        for _ in range(max_backtracks):
            if used() / d >= budget:
                break
            x_new = x + alpha * p
            f_new = f(x_new)
            if observe is not None:
                observe(x_new, f_new)
            if f_new <= fx + armijo * alpha * slope + allowance:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            pairs.clear()
            rec.values.append(best)
            rec.evals.append(used())
            if used() / d >= budget:
                break
            g, n = oracle(x)
            rec.grad_evals += n
            fx = None
            continue
        if used() / d >= budget:
            x, fx = x_new, f_new
            best = min(best, float(problem.f(x)))
            rec.values.append(best)
            rec.evals.append(used())
            break
        g_new, n = oracle(x_new)
        rec.grad_evals += n
        s, y = x_new - x, g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
        x, g, fx = x_new, g_new, f_new
        best = min(best, float(problem.f(x)))
        rec.values.append(best)
        rec.evals.append(used())
    return rec


def _resolve_problems(cfg):
    if cfg["problems"] == "builtin":
        return [("builtin", i) for i in range(len(dfo_problem_set()))]
    return [("spec", p) for p in cfg["problems"]]


def _build_problem(ref, sigma):
    kind, item = ref
    if kind == "builtin":
        return dfo_problem_set(sigma)[item]
    p = make_problem({**item, "sigma": sigma})
    if p.x_start is None:
        raise ConfigError(f"problem {p.name} has no start point")
    return p


def _run_task(task):
    ref, pi, mi, hi, si, run, method, h, sigma, cfg = task
    seed = cfg["seed"]
    rng = np.random.default_rng((seed, pi, mi, hi, si, run))
    try:
        problem = _build_problem(ref, sigma)
    except CasgError as exc:
        return RunRecord(str(ref[1]), method, h, run, sigma, 0, math.nan, status="failed", error=str(exc))
    rec = RunRecord(problem.name, method, h, run, sigma, problem.dim, float(problem.f(problem.x_start)))
    f = NoisyFunction(problem, rng)
    try:
        oracle = GradientOracle(method, problem, f, h, rng, cfg)
        lbfgs_run(problem, oracle, f, float(cfg["budget"]), int(cfg["memory"]), float(cfg["armijo"]),
                  float(cfg["noise_allowance"]), count_init=bool(cfg["include_init"]), record=rec)
    except (CasgError, np.linalg.LinAlgError, FloatingPointError) as exc:
        rec.status = "failed"
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def dfo_run(cfg: dict, threads: int | None = 1) -> list[RunRecord]:
    """Every (problem, method, h, sigma, run) combination of a validated dfo config."""
    tasks = []
    for pi, ref in enumerate(_resolve_problems(cfg)):
        for mi, method in enumerate(cfg["methods"]):
            for hi, h in enumerate(cfg["steps"]):
                for si, sigma in enumerate(cfg["sigmas"]):
                    for run in range(cfg["runs"]):
                        tasks.append((ref, pi, mi, hi, si, run, method, float(h), float(sigma), cfg))
    records = parallel_map(_run_task, tasks, threads)
    return sorted(records, key=lambda r: (r.sigma, r.problem, r.method, r.h, r.seed))


def select_best(records) -> list[RunRecord]:
    """Keep, per (sigma, problem, method), the runs of the step with the lowest mean final value."""
    groups = {}
    for r in records:
        groups.setdefault((r.sigma, r.problem, r.method), {}).setdefault(r.h, []).append(r)
    out = []
    for key in sorted(groups):
        by_h = groups[key]

        def score(h):
            finals = [r.values[-1] if r.status == "ok" and r.values else math.inf for r in by_h[h]]
            return (float(np.mean(finals)), h)

        out.extend(by_h[min(by_h, key=score)])
    return out


def data_profile(records, tau: float, budgets) -> dict:
    """Fraction of runs per method meeting the convergence test by each budget.

    A run on a problem converges at the first recorded budget with
    ``f(x0) - f(x_k) >= (1 - tau) (f(x0) - f_L)``, where ``f_L`` is the
    lowest mean final value over methods on that problem. Failed runs count
    as never converging.
    """
    records = list(records)
    if not records:
        raise EmptyRecordSet("no run records to profile")
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    budgets = np.asarray(budgets, dtype=float)

    f_low = {}
    by_pm = {}
    for r in records:
        by_pm.setdefault((r.problem, r.method), []).append(r)
    for (p, m), rs in by_pm.items():
        finals = [r.values[-1] for r in rs if r.status == "ok" and r.values]
        if finals:
            f_low[p] = min(f_low.get(p, math.inf), float(np.mean(finals)))

    methods = sorted({r.method for r in records})
    curves = {}
    for m in methods:
        runs = [r for r in records if r.method == m]
        hit = np.zeros((len(runs), budgets.size), dtype=bool)
        for i, r in enumerate(runs):
            if r.status != "ok" or not r.values or r.problem not in f_low:
                continue
            target = (1 - tau) * (r.f0 - f_low[r.problem])
            ok = np.flatnonzero(r.f0 - np.asarray(r.values) >= target)
            if ok.size:
                b = r.budgets()[ok[0]]
                hit[i] = budgets >= b
        curves[m] = hit.mean(axis=0)
    return curves
