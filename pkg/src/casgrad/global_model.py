"""Cubic radial-basis surrogate of the evaluation history and the framework step.

The surrogate is ``phi(x) = sum_i w_i ||x - c_i||^3 + p(x)`` with an affine
tail ``p`` and the usual side conditions ``P^T w = 0``. Smoothing adds a
ridge to the kernel block. Value, gradient and Hessian are analytic:

    d/dx r^3   = 3 r (x - c)
    d2/dx2 r^3 = 3 r I + 3 (x - c)(x - c)^T / r      (0 at r = 0)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .baselines import fd_estimate, fd_sample_set
from .casg import casg_sample_set
from .ecasg import ecasg_sample_set
from .errors import ConfigError, DegenerateGeometry
from .history import EvaluationHistory
from .simplex_core import COND_LIMIT, CurvatureSpec, SampleSet

__all__ = [
    "RbfModel",
    "FilterPolicy",
    "fit_rbf",
    "model_query",
    "apply_filter",
    "estimate_with_hessian",
    "framework_step",
    "ESTIMATORS",
]

ESTIMATORS = ("casg", "ecasg", "fd", "global_grad")


@dataclass(frozen=True)
class RbfModel:
    centers: np.ndarray
    weights: np.ndarray
    tail: np.ndarray  # [constant, linear coefficients...]
    smoothing: float

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def value(self, X) -> np.ndarray:
        """Model values at the rows of ``X`` (vectorized)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        r = cdist(X, self.centers)
        return (r**3) @ self.weights + self.tail[0] + X @ self.tail[1:]

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        diff = x[None, :] - self.centers
        r = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        return 3 * (self.weights * r) @ diff + self.tail[1:]

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        diff = x[None, :] - self.centers
        r = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        safe = r > 0
        coef = np.zeros_like(r)
        coef[safe] = self.weights[safe] / r[safe]
        M = 3 * (diff * coef[:, None]).T @ diff
        H = 0.5 * (M + M.T)
        H[np.diag_indices_from(H)] += 3 * float(self.weights @ r)
        return H


@dataclass(frozen=True)
class FilterPolicy:
    """Which history records feed the fit.

    ``mode`` is ``all``, ``nearest_k`` (closest to the query point) or
    ``latest_k``; records closer than ``dedup_radius`` to an earlier kept
    record are dropped first.
    """

    mode: str = "nearest_k"
    k: int | None = None
    dedup_radius: float = 1e-9

    def __post_init__(self):
        if self.mode not in ("all", "nearest_k", "latest_k"):
            raise ConfigError(f"unknown filter mode {self.mode!r}")
        if self.dedup_radius < 0:
            raise ConfigError("dedup_radius must be nonnegative")

    def k_for(self, d: int) -> int:
        k = self.k if self.k is not None else min(100 * d, 1000)
        if k < d + 1:
            raise ConfigError(f"filter size {k} below d+1 = {d + 1}")
        return k


def _dedup(X, radius) -> np.ndarray:
    """Indices of records kept after dropping near-duplicates of earlier ones."""
    n = X.shape[0]
    if radius <= 0 or n < 2:
        return np.arange(n)
    tree = cKDTree(X)
    drop = np.zeros(n, dtype=bool)
    for i, j in sorted(tree.query_pairs(radius)):
        if not drop[i]:
            drop[j] = True
    return np.flatnonzero(~drop)


def apply_filter(history: EvaluationHistory, policy: FilterPolicy, x0) -> EvaluationHistory:
    X = history.X
    keep = _dedup(X, policy.dedup_radius)
    if policy.mode != "all":
        k = min(policy.k_for(history.dim), keep.size)
        if policy.mode == "latest_k":
            keep = keep[-k:]
        else:
            dist = np.linalg.norm(X[keep] - np.asarray(x0, dtype=float)[None, :], axis=1)
            keep = keep[np.argsort(dist, kind="stable")[:k]]
    return history.subset(keep)


def fit_rbf(history: EvaluationHistory, smoothing: float = 0.0) -> RbfModel:
    """Fit the cubic RBF with affine tail to every record of ``history``."""
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    X, y = history.X, history.y
    n, d = X.shape
    if n < d + 2:
        raise DegenerateGeometry(f"need at least {d + 2} points to fit in dimension {d}, got {n}")

    # The tail is fitted in centred, scaled coordinates for conditioning.
    shift = X.mean(axis=0)
    scale = float(np.max(np.ptp(X, axis=0))) / 2 or 1.0
    P = np.hstack([np.ones((n, 1)), (X - shift) / scale])
    A = np.zeros((n + d + 1, n + d + 1))
    A[:n, :n] = cdist(X, X) ** 3
    A[np.diag_indices(n)] += smoothing
    A[:n, n:] = P
    A[n:, :n] = P.T
    rhs = np.concatenate([y, np.zeros(d + 1)])

    lu, piv, info = scipy.linalg.lapack.dgetrf(A)
    if info != 0:
        raise DegenerateGeometry("RBF system is exactly singular (duplicate or collinear points?)")
    anorm = np.max(np.sum(np.abs(A), axis=0))
    rcond, _ = scipy.linalg.lapack.dgecon(lu, anorm, norm="1")
    if not rcond > 1 / COND_LIMIT:
        raise DegenerateGeometry(f"RBF system is ill-conditioned (rcond {rcond:.3g})")
    sol = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
    w, c = sol[:n], sol[n:]
    lin = c[1:] / scale
    tail = np.concatenate([[c[0] - lin @ shift], lin])
    return RbfModel(X.copy(), w, tail, float(smoothing))


def model_query(model: RbfModel, x, order: str = "value"):
    if order == "value":
        return float(model.value(np.asarray(x, dtype=float)[None, :])[0])
    if order == "gradient":
        return model.gradient(x)
    if order == "hessian":
        return model.hessian(x)
    raise ValueError(f"unknown query order {order!r}")


def estimate_with_hessian(estimator: str, H, sigma: float, h: float, f, x0):
    """Build the estimator's sample set from curvature ``H`` and evaluate it."""
    spec = CurvatureSpec(H, sigma, h)
    if estimator == "casg":
        sample, _ = casg_sample_set(spec, x0)
    elif estimator == "ecasg":
        sample, _ = ecasg_sample_set(spec, x0)
    elif estimator == "fd":
        sample, _ = fd_sample_set(spec, x0)
    else:
        raise ConfigError(f"estimator {estimator!r} does not take a Hessian")
    return fd_estimate(f, sample)


def framework_step(
    history: EvaluationHistory,
    policy: FilterPolicy,
    smoothing: float,
    estimator: str,
    sigma: float,
    h: float,
    f,
    x0,
    stencil_step: float = 0.1,
):
    """One gradient estimate driven by the global model.

    Returns ``(gradient, new_history)``; the input history is never modified.
    For ``global_grad`` the model gradient is returned and a forward-difference
    stencil of length ``stencil_step`` is evaluated only to grow the history.
    """
    if estimator not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {estimator!r}")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    model = fit_rbf(apply_filter(history, policy, x0), smoothing)
    if estimator == "global_grad":
        g = model.gradient(x0)
        stencil = SampleSet.from_differences(x0, stencil_step * np.eye(x0.size))
        _, new_evals = fd_estimate(f, stencil)
    else:
        g, new_evals = estimate_with_hessian(estimator, model.hessian(x0), sigma, h, f, x0)
    out = history.copy()
    out.extend(new_evals)
    return g, out
