"""Sample sets, the simplex gradient and its mean-squared-error functionals.

A sample set is a base point ``x0`` plus ``d`` further points. Its difference
matrix ``S`` holds ``x_i - x0`` in column ``i``, and the simplex gradient is
``S^{-T} (f(x_i) - f(x0))_i``. For additive i.i.d. noise of level ``sigma``
the mean squared error of that estimate splits into

    approximation error  1/4 || S^{-T} [s_i^T H s_i]_i ||^2   (second order)
    noise error          sigma^2 ||S^{-1}||_F^2 + sigma^2 ||S^{-T} 1||^2

and ``objective`` is their sum on the feasible set ``||S||_2 <= h``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import EstimatorFailure, NonFiniteInput, SingularDifferenceMatrix
from .history import EvaluationHistory

__all__ = [
    "COND_LIMIT",
    "NORM_SLACK",
    "SampleSet",
    "CurvatureSpec",
    "EvaluationHistory",
    "difference_matrix",
    "spectral_norm",
    "simplex_gradient",
    "noise_error",
    "approximation_error",
    "objective",
    "mse_monte_carlo",
]

# S is treated as singular above this 2-norm condition number.
COND_LIMIT = 1e12
# Relative slack on ||S||_2 <= h; optimal sets sit exactly on the boundary.
NORM_SLACK = 1e-12


@dataclass(frozen=True)
class SampleSet:
    """Base point ``x0`` and the ``d`` points ``x_1..x_d`` (rows of ``points``)."""

    x0: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape != (x0.size, x0.size):
            raise ValueError(
                f"a sample set in dimension {x0.size} needs {x0.size} extra points, "
                f"got array of shape {pts.shape}"
            )
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_differences(cls, x0, S) -> "SampleSet":
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        return cls(x0, x0[None, :] + np.asarray(S, dtype=float).T)

    @property
    def dim(self) -> int:
        return self.x0.size

    def all_points(self) -> np.ndarray:
        """The ``d+1`` evaluation points, ``x0`` first."""
        return np.vstack([self.x0, self.points])


@dataclass(frozen=True)
class CurvatureSpec:
    """Hessian ``H``, noise level ``sigma`` and radius bound ``h``.

    ``R`` and ``D`` are the eigen-decomposition ``H = R diag(D) R^T`` with
    ``D`` increasing.
    """

    H: np.ndarray
    sigma: float
    h: float

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError(f"H must be square, got shape {H.shape}")
        if not np.all(np.isfinite(H)):
            raise NonFiniteInput("H contains non-finite entries")
        if not (np.isfinite(self.sigma) and np.isfinite(self.h)):
            raise NonFiniteInput("sigma and h must be finite")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.h <= 0:
            raise ValueError("h must be positive")
        # Symmetrize; callers hand in numerically symmetric matrices.
        object.__setattr__(self, "H", 0.5 * (H + H.T))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "h", float(self.h))

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    @cached_property
    def _eig(self):
        D, R = np.linalg.eigh(self.H)
        order = np.argsort(D, kind="stable")
        return R[:, order], D[order]

    @property
    def R(self) -> np.ndarray:
        return self._eig[0]

    @property
    def D(self) -> np.ndarray:
        return self._eig[1]


def difference_matrix(sample: SampleSet) -> np.ndarray:
    """``S`` with column ``j`` equal to ``x_j - x0``."""
    return (sample.points - sample.x0[None, :]).T


def spectral_norm(S) -> float:
    return float(np.linalg.norm(S, 2))


def _factor(S):
    """LU factorization of ``S^T``; raises when ``S`` is numerically singular."""
    S = np.asarray(S, dtype=float)
    if not np.all(np.isfinite(S)):
        raise SingularDifferenceMatrix("difference matrix has non-finite entries")
    if np.linalg.cond(S) > COND_LIMIT:
        raise SingularDifferenceMatrix(
            f"difference matrix is singular (condition estimate above {COND_LIMIT:g})"
        )
    return scipy.linalg.lu_factor(S.T, check_finite=False)


def simplex_gradient(S, delta_f) -> np.ndarray:
    """Solve ``S^T g = delta_f`` (``delta_f_i = f(x_i) - f(x0)``)."""
    lu = _factor(S)
    return scipy.linalg.lu_solve(lu, np.asarray(delta_f, dtype=float), check_finite=False)


def _noise_error(lu, d, sigma) -> float:
    # Columns of inv(S^T) = S^{-T}; ||S^{-T}||_F = ||S^{-1}||_F.
    inv_t = scipy.linalg.lu_solve(lu, np.eye(d), check_finite=False)
    frob = float(np.sum(inv_t * inv_t))
    ones = inv_t.sum(axis=1)
    return sigma**2 * (frob + float(ones @ ones))


def _approximation_error(lu, S, H) -> float:
    curv = np.einsum("ji,jk,ki->i", S, H, S)
    v = scipy.linalg.lu_solve(lu, curv, check_finite=False)
    return 0.25 * float(v @ v)


def noise_error(S, sigma: float) -> float:
    S = np.asarray(S, dtype=float)
    return _noise_error(_factor(S), S.shape[0], sigma)


def approximation_error(S, H) -> float:
    S = np.asarray(S, dtype=float)
    return _approximation_error(_factor(S), S, np.asarray(H, dtype=float))


def objective(S, spec: CurvatureSpec) -> float:
    """Approximation plus noise error, or ``inf`` outside the feasible set."""
    S = np.asarray(S, dtype=float)
    if not np.all(np.isfinite(S)):
        return np.inf
    if spectral_norm(S) > spec.h * (1 + NORM_SLACK):
        return np.inf
    try:
        lu = _factor(S)
    except SingularDifferenceMatrix:
        return np.inf
    return _approximation_error(lu, S, spec.H) + _noise_error(lu, S.shape[0], spec.sigma)


def mse_monte_carlo(estimator, problem, x0, trials: int, seed: int):
    """Empirical mean and standard error of ``||g_hat - grad f(x0)||^2``.

    ``estimator(f, x0)`` returns a gradient (or a tuple whose first item is
    one); ``problem`` exposes ``f`` (noiseless), ``grad`` and ``sigma``. Trial
    ``i`` draws its noise from a generator seeded with ``(seed, i)``, so
    results do not depend on execution order.
    """
    if trials < 2:
        raise ValueError("need at least two trials for a standard error")
    x0 = np.asarray(x0, dtype=float)
    g_true = np.asarray(problem.grad(x0), dtype=float)
    sigma = float(problem.sigma)
    errs = np.empty(trials)
    for i in range(trials):
        rng = np.random.default_rng((seed, i))

        def f(x, _rng=rng):
            return float(problem.f(np.asarray(x, dtype=float))) + sigma * _rng.standard_normal()

        try:
            out = estimator(f, x0)
        except Exception as exc:
            raise EstimatorFailure(i, exc) from exc
        g = np.asarray(out[0] if isinstance(out, tuple) else out, dtype=float)
        diff = g - g_true
        errs[i] = float(diff @ diff)
    return float(errs.mean()), float(errs.std(ddof=1) / np.sqrt(trials))
