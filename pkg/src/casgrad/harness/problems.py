"""Test problems, the noise model and reference derivatives.

Every noiseless function accepts a single point ``(d,)`` or a batch ``(n, d)``
and returns a float or an ``(n,)`` array respectively.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable

import numpy as np

from ..errors import ConfigError, NonFiniteState
from ..history import EvaluationHistory

COLON_PARAMS = ("alpha1", "alpha2", "alpha3", "beta1", "beta2", "beta3", "gamma", "k0", "c1", "m0", "m1")


@dataclass
class Problem:
    name: str
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    f: Callable
    sigma: float
    grad: Callable | None = None
    hess: Callable | None = None
    x_start: np.ndarray | None = None
    f_star: float | None = None
    meta: dict = field(default_factory=dict)

    def sample_uniform(self, rng, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def with_sigma(self, sigma: float) -> "Problem":
        return Problem(
            self.name, self.dim, self.lower, self.upper, self.f, float(sigma),
            self.grad, self.hess, self.x_start, self.f_star, dict(self.meta),
        )


class NoisyFunction:
    """``f(x) + sigma * N(0, 1)`` with one independent draw per evaluation.

    Counts evaluations and, when ``record`` is set, logs them to ``history``.
    """

    def __init__(self, problem: Problem, rng: np.random.Generator, record: bool = False):
        self.problem = problem
        self.rng = rng
        self.evals = 0
        self.history = EvaluationHistory(problem.dim) if record else None

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        y = float(self.problem.f(x)) + self.problem.sigma * self.rng.standard_normal()
        self.evals += 1
        if self.history is not None:
            self.history.append(x, y)
        return y

    def batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(self.problem.f(X), dtype=float) + self.problem.sigma * self.rng.standard_normal(len(X))
        self.evals += len(X)
        if self.history is not None:
            for xi, yi in zip(X, y):
                self.history.append(xi, yi)
        return y


def _batched(fn):
    def wrapper(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return float(fn(x[None, :])[0])
        return fn(x)

    return wrapper


def _box(dim, lo, hi):
    return np.full(dim, float(lo)), np.full(dim, float(hi))


# -- quadratics -------------------------------------------------------------


def quadratic(H, g=None, sigma: float = 0.0, name: str = "quadratic", x_start=None, bound: float = 1.0) -> Problem:
    """``1/2 x^T H x + g^T x``."""
    H = np.asarray(H, dtype=float)
    H = 0.5 * (H + H.T)
    d = H.shape[0]
    g = np.zeros(d) if g is None else np.asarray(g, dtype=float)

    @_batched
    def f(X):
        return 0.5 * np.einsum("ni,ij,nj->n", X, H, X) + X @ g

    f_star = None
    if np.all(np.linalg.eigvalsh(H) > 0):
        xs = np.linalg.solve(H, -g)
        f_star = float(0.5 * xs @ H @ xs + g @ xs)
    lo, hi = _box(d, -bound, bound)
    return Problem(
        name, d, lo, hi, f, float(sigma),
        grad=lambda x: H @ np.asarray(x, dtype=float) + g,
        hess=lambda x: H.copy(),
        x_start=None if x_start is None else np.asarray(x_start, dtype=float),
        f_star=f_star,
    )


def quad_k(k: float, sigma: float = 0.1) -> Problem:
    """Two-dimensional toy ``k x^2 + y^2`` (Hessian ``diag(2k, 2)``)."""
    p = quadratic(np.diag([2.0 * k, 2.0]), sigma=sigma, name=f"quad_k[{k:g}]")
    p.meta["k"] = float(k)
    return p


def quartic_indefinite(dim: int, sigma: float = 0.0) -> Problem:
    """``1/2 x^T H x + 1/4 sum x_i^4`` with indefinite ``H``; bounded below."""
    diag = np.linspace(-1.0, 2.0, dim)

    @_batched
    def f(X):
        return 0.5 * (X * X) @ diag + 0.25 * np.sum(X**4, axis=1)

    def grad(x):
        x = np.asarray(x, dtype=float)
        return diag * x + x**3

    def hess(x):
        x = np.asarray(x, dtype=float)
        return np.diag(diag + 3 * x**2)

    neg = diag < 0
    f_star = float(-0.25 * np.sum(diag[neg] ** 2))
    lo, hi = _box(dim, -2, 2)
    return Problem(f"quartic_indef{dim}", dim, lo, hi, f, sigma, grad, hess,
                   x_start=np.full(dim, 0.1), f_star=f_star)


# -- Ackley -----------------------------------------------------------------


def ackley(dim: int, sigma: float = 0.0) -> Problem:
    if dim < 1:
        raise ConfigError("Ackley dimension must be positive")
    n = dim
    two_pi = 2 * math.pi

    @_batched
    def f(X):
        rho = np.sqrt(np.sum(X * X, axis=1) / n)
        cbar = np.sum(np.cos(two_pi * X), axis=1) / n
        return -20 * np.exp(-0.2 * rho) - np.exp(cbar) + 20 + math.e

    def grad(x):
        x = np.asarray(x, dtype=float)
        rho = math.sqrt(float(x @ x) / n)
        c = math.exp(float(np.sum(np.cos(two_pi * x))) / n)
        g = (two_pi / n) * c * np.sin(two_pi * x)
        if rho > 0:
            g = g + 4 * math.exp(-0.2 * rho) * x / (n * rho)
        return g

    def hess(x):
        x = np.asarray(x, dtype=float)
        rho = math.sqrt(float(x @ x) / n)
        c = math.exp(float(np.sum(np.cos(two_pi * x))) / n)
        s = np.sin(two_pi * x)
        H = (4 * math.pi**2 / n) * c * (np.diag(np.cos(two_pi * x)) - np.outer(s, s) / n)
        if rho > 0:
            e = math.exp(-0.2 * rho)
            xx = np.outer(x, x)
            H = H + (4 * e / n) * (np.eye(n) / rho - 0.2 * xx / (n * rho**2) - xx / (n * rho**3))
        return H

    lo, hi = _box(dim, -0.5, 0.5)
    return Problem(f"ackley{dim}", dim, lo, hi, f, sigma, grad, hess,
                   x_start=np.full(dim, 0.3), f_star=0.0)


# -- Rosenbrock -------------------------------------------------------------


def rosenbrock(dim: int, sigma: float = 0.0) -> Problem:
    if dim < 2:
        raise ConfigError("Rosenbrock needs dimension >= 2")

    @_batched
    def f(X):
        return np.sum(100 * (X[:, 1:] - X[:, :-1] ** 2) ** 2 + (1 - X[:, :-1]) ** 2, axis=1)

    def grad(x):
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        t = x[1:] - x[:-1] ** 2
        g[:-1] += -400 * x[:-1] * t - 2 * (1 - x[:-1])
        g[1:] += 200 * t
        return g

    def hess(x):
        x = np.asarray(x, dtype=float)
        d = x.size
        H = np.zeros((d, d))
        i = np.arange(d - 1)
        H[i, i] += 1200 * x[:-1] ** 2 - 400 * x[1:] + 2
        H[i + 1, i + 1] += 200
        H[i, i + 1] = H[i + 1, i] = -400 * x[:-1]
        return H

    start = np.tile([-1.2, 1.0], dim // 2 + 1)[:dim]
    lo, hi = _box(dim, -2, 2)
    return Problem(f"rosenbrock{dim}", dim, lo, hi, f, sigma, grad, hess, x_start=start, f_star=0.0)


# -- colon-crypt ODE --------------------------------------------------------


def colon_defaults() -> dict:
    """Shipped (non-canonical) coefficient defaults."""
    text = resources.files("casgrad.harness").joinpath("data/colon_defaults.json").read_text()
    return {k: v for k, v in json.loads(text).items() if not k.startswith("_")}


def colon_trajectory(P, horizon: float = 100.0, dt: float = 0.01, n0=(1.0, 100.0, 100.0), every: int = 0):
    """Explicit Euler for a batch of coefficient rows ``P`` (order ``COLON_PARAMS``).

    Returns the final states ``(n, 3)``; with ``every > 0`` also the states
    recorded every ``every`` steps.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    a1, a2, a3, b1, b2, b3, g, k0, c1, m0, m1 = P.T
    N0 = np.full(len(P), n0[0])
    N1 = np.full(len(P), n0[1])
    N2 = np.full(len(P), n0[2])
    r0 = a3 - a1 - a2
    r1 = b3 - b1 - b2
    steps = int(round(horizon / dt))
    saved = []
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(steps):
            s0 = k0 * N0 * N0 / (1 + m0 * N0)
            s1 = c1 * N1 * N1 / (1 + m1 * N1)
            dN0 = r0 * N0 - s0
            dN1 = r1 * N1 + a2 * N0 - s1 + s0
            dN2 = -g * N2 + b2 * N1 + s1
            N0 = N0 + dt * dN0
            N1 = N1 + dt * dN1
            N2 = N2 + dt * dN2
            if every and (i + 1) % every == 0:
                saved.append(np.stack([N0, N1, N2], axis=1))
    final = np.stack([N0, N1, N2], axis=1)
    if every:
        return final, np.stack(saved, axis=1)
    return final


def colon_ode(coeffs: dict | None = None, sigma: float = 1e-3, spread: float = 0.1) -> Problem:
    """Stem-cell population ``N0`` at day 100 as a function of the 11 coefficients.

    The domain is ``+-spread`` (relative) around the configured coefficients.
    """
    base = colon_defaults()
    if coeffs:
        unknown = set(coeffs) - set(COLON_PARAMS)
        if unknown:
            raise ConfigError(f"unknown colon coefficients {sorted(unknown)}")
        base.update(coeffs)
    center = np.array([float(base[k]) for k in COLON_PARAMS])
    if np.any(center <= 0):
        raise ConfigError("colon coefficients must be positive")

    @_batched
    def f(X):
        out = colon_trajectory(X)[:, 0]
        if not np.all(np.isfinite(out)):
            raise NonFiniteState("Euler trajectory diverged")
        return out

    return Problem("colon", len(COLON_PARAMS), center * (1 - spread), center * (1 + spread), f, sigma,
                   x_start=center.copy(), meta={"coefficients": base})


# -- registry ---------------------------------------------------------------


def make_problem(spec: dict) -> Problem:
    """Build a problem from a config entry such as ``{"name": "ackley", "dim": 8}``."""
    spec = dict(spec)
    name = spec.pop("name", None)
    sigma = float(spec.pop("sigma", 0.0))
    try:
        if name == "ackley":
            return ackley(int(spec.get("dim", 8)), sigma)
        if name == "rosenbrock":
            return rosenbrock(int(spec.get("dim", 4)), sigma)
        if name == "quartic_indef":
            return quartic_indefinite(int(spec.get("dim", 4)), sigma)
        if name == "quad_k":
            return quad_k(float(spec["k"]), sigma)
        if name == "colon":
            return colon_ode(spec.get("coefficients"), sigma, float(spec.get("spread", 0.1)))
        if name == "quadratic":
            if "H" in spec:
                H = np.asarray(spec["H"], dtype=float)
            else:
                d = int(spec.get("dim", 4))
                cond = float(spec.get("cond", 1.0))
                eig = np.logspace(0, math.log10(cond), d)
                Q, _ = np.linalg.qr(np.random.default_rng(int(spec.get("rotation_seed", 0))).normal(size=(d, d)))
                H = Q @ np.diag(eig) @ Q.T
            d = H.shape[0]
            g = spec.get("g")
            x_start = spec.get("x_start", [1.0] * d)
            label = spec.get("label", f"quadratic{d}")
            return quadratic(H, g, sigma, label, x_start)
    except KeyError as exc:
        raise ConfigError(f"problem {name!r} is missing field {exc}") from exc
    raise ConfigError(f"unknown problem {name!r}")


def dfo_problem_set(sigma: float = 0.0) -> list[Problem]:
    """Built-in desk-scale benchmark set (the colon model is left out for runtime)."""
    specs = [
        {"name": "quadratic", "dim": 4, "cond": 10.0, "label": "quad_well4"},
        {"name": "quadratic", "dim": 8, "cond": 1e3, "label": "quad_ill8", "rotation_seed": 1},
        {"name": "quartic_indef", "dim": 4},
        {"name": "ackley", "dim": 4},
        {"name": "ackley", "dim": 8},
        {"name": "rosenbrock", "dim": 4},
        {"name": "rosenbrock", "dim": 8},
    ]
    return [make_problem({**s, "sigma": sigma}) for s in specs]


# -- reference derivatives ---------------------------------------------------


def _cd_gradient(f, x, steps):
    d = x.size
    E = np.diag(steps)
    vals = np.asarray(f(np.vstack([x + E, x - E])), dtype=float)
    return (vals[:d] - vals[d:]) / (2 * steps)


def reference_gradient(problem: Problem, x, h0: float = 1e-4, rtol: float = 1e-7, max_halvings: int = 8):
    """Analytic gradient when available, else Richardson-refined central differences.

    Step ``h0`` is relative to ``max(|x_i|, 1)`` and halved until two
    successive Richardson estimates agree to ``rtol``.
    """
    x = np.asarray(x, dtype=float)
    if problem.grad is not None:
        return np.asarray(problem.grad(x), dtype=float)
    scale = np.maximum(np.abs(x), 1.0)
    step = h0 * scale
    prev_cd = _cd_gradient(problem.f, x, step)
    prev = None
    for _ in range(max_halvings):
        step = step / 2
        cd = _cd_gradient(problem.f, x, step)
        rich = (4 * cd - prev_cd) / 3
        if prev is not None and np.linalg.norm(rich - prev) <= rtol * max(np.linalg.norm(rich), 1e-300):
            return rich
        prev, prev_cd = rich, cd
    return prev


def reference_hessian(problem: Problem, x, h: float = 1e-3, hg: float = 1e-4):
    """Analytic Hessian when available, else central differences of the gradient."""
    x = np.asarray(x, dtype=float)
    if problem.hess is not None:
        return np.asarray(problem.hess(x), dtype=float)
    d = x.size
    scale = np.maximum(np.abs(x), 1.0)
    sh = h * scale
    if problem.grad is not None:
        rows = [(problem.grad(x + sh[j] * np.eye(d)[j]) - problem.grad(x - sh[j] * np.eye(d)[j])) / (2 * sh[j])
                for j in range(d)]
        H = np.array(rows)
    else:
        sg = hg * scale
        I = np.eye(d)
        pts = []
        for j in range(d):
            for sj in (1, -1):
                xj = x + sj * sh[j] * I[j]
                pts.append(xj + sg * I)
                pts.append(xj - sg * I)
        vals = np.asarray(problem.f(np.vstack(pts)), dtype=float).reshape(d, 2, 2, d)
        grads = (vals[:, :, 0, :] - vals[:, :, 1, :]) / (2 * sg)
        H = (grads[:, 0, :] - grads[:, 1, :]) / (2 * sh[:, None])
    return 0.5 * (H + H.T)
