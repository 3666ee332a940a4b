"""Optimal simplex-gradient sample sets for power-of-two dimensions.

Working in the eigenbasis ``H = R diag(D) R^T`` (``D`` increasing, nonnegative
trace) the optimal difference matrix is ``R diag(sqrt(lam)) V^T`` where ``V``
is a normalized Hadamard matrix whose all-positive column sits at the index
of the largest singular value, and ``lam`` minimizes

    (sum_i D_i lam_i)^2 / (4 d lam_1) + sigma^2 sum_i 1/lam_i + sigma^2 d / lam_1

over ``0 < lam <= h^2``. The minimizer is found in closed form by scanning
active sets ``{1..J}`` (entries pinned at ``h^2``) upward and accepting the
first feasible stationary point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidActiveSet, NegativeTrace, NonFiniteInput, NotPowerOfTwo
from .simplex_core import CurvatureSpec, SampleSet, objective

__all__ = [
    "TINY_CURVATURE",
    "SigmaSolution",
    "CasgResult",
    "is_power_of_two",
    "get_lambda_next",
    "get_sigma_star",
    "sigma_objective",
    "hadamard",
    "casg_sample_set",
    "lower_bound",
]

# Positive curvatures at or below this are pinned to h^2 with the nonpositive ones.
TINY_CURVATURE = 1e-300


@dataclass(frozen=True)
class SigmaSolution:
    """``lam = diag(Sigma^2)`` (decreasing), trace value ``a`` and active count ``J``."""

    lam: np.ndarray
    a: float
    J: int

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.lam)


@dataclass(frozen=True)
class CasgResult:
    """Factors of the optimal difference matrix ``S_star = R diag(Sigma) V^T``.

    ``Sigma`` is ordered like ``D`` (the increasing eigenvalues of ``H``), so
    ``R`` is the eigenvector matrix of the curvature spec object. ``U`` is always the identity.
    """

    S_star: np.ndarray
    R: np.ndarray
    D: np.ndarray
    U: np.ndarray
    Sigma: np.ndarray
    V: np.ndarray
    objective_value: float
    negated: bool
    solution: SigmaSolution


def is_power_of_two(d: int) -> bool:
    return d >= 1 and (d & (d - 1)) == 0


def _positive_cubic_root(c1, c2):
    """Unique positive root of ``x^3 - c2 x - c1`` for ``c1 > 0`` (elementwise)."""
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    c1, c2 = np.broadcast_arrays(c1, c2)
    # Only the sign of the discriminant matters; extended precision keeps it honest.
    disc = 27 * np.longdouble(1) * c1.astype(np.longdouble) ** 2 - 4 * c2.astype(np.longdouble) ** 3
    trig = disc < 0

    x = np.empty(c1.shape)
    if np.any(trig):
        t1, t2 = c1[trig], c2[trig]
        cos_theta = np.clip(9 * t1 / np.sqrt(12 * t2**3), -1.0, 1.0)
        x[trig] = 2 * np.sqrt(t2 / 3) * np.cos(np.arccos(cos_theta) / 3)
    rad = ~trig
    if np.any(rad):
        r1, r2 = c1[rad], c2[rad]
        s = np.sqrt(np.maximum(disc[rad] / 108, 0).astype(float))
        u = np.cbrt(r1 / 2 + s)
        v = np.abs(r2) / (3 * u)
        # u + v when c2 >= 0; otherwise u - v written without cancellation (u^3 - v^3 = c1).
        x[rad] = np.where(r2 >= 0, u + v, r1 / (u * u + u * v + v * v))
    for _ in range(2):
        f = x**3 - c2 * x - c1
        fp = 3 * x * x - c2
        x = x - np.where(fp > 0, f / np.where(fp > 0, fp, 1.0), 0.0)
    return x


def _check_increasing(D):
    D = np.asarray(D, dtype=float).reshape(-1)
    if D.size == 0:
        raise InvalidActiveSet("empty curvature vector")
    if not np.all(np.isfinite(D)):
        raise NonFiniteInput("curvatures must be finite")
    if np.any(np.diff(D) < 0):
        raise InvalidActiveSet("curvatures must be sorted in increasing order")
    return D


def _pinned_count(D) -> int:
    return int(np.count_nonzero(D <= TINY_CURVATURE))


def _quartic_a(D1, C, d, sigma):
    """Trace value for the empty active set (closed-form quartic root)."""
    inner = C * math.sqrt(8 * D1 * (d + 1) + C * C) + 2 * D1 * (d + 1) + C * C
    return math.sqrt(2.0) * math.sqrt(d * sigma**2 / D1 * inner)


def _lambda_first(a, D1, d, sigma):
    return 2 * d / (a * D1) * (a * a / (4 * d) + sigma**2 * (d + 1))


def get_lambda_next(J: int, D, sigma: float, h: float, c1: float, c2: float):
    """Candidate ``lam_{J+1}`` and trace value ``a`` for the active set ``{1..J}``.

    ``c1 = sum_{i>J} sqrt(D_i)`` and ``c2 = sum_{i<=J} D_i`` are the raw sums
    maintained by the caller (1-based indices).
    """
    D = _check_increasing(D)
    d = D.size
    if not (0 <= J < d):
        raise InvalidActiveSet(f"active count {J} outside [0, {d})")
    if math.fsum(D) <= 0:
        raise InvalidActiveSet("curvature trace must be positive")
    if J < _pinned_count(D):
        raise InvalidActiveSet("every nonpositive curvature must be in the active set")
    if sigma <= 0 or h <= 0:
        raise InvalidActiveSet("sigma and h must be positive")

    if J == 0:
        D1 = float(D[0])
        C = max(c1 - math.sqrt(D1), 0.0)
        a = _quartic_a(D1, C, d, sigma)
        return _lambda_first(a, D1, d, sigma), a

    k1 = sigma * math.sqrt(2 * d * h * h) * c1
    k2 = h * h * c2
    x = float(_positive_cubic_root(k1, k2))
    a = x * x
    return sigma * math.sqrt(2 * d * h * h / (a * D[J])), a


def get_sigma_star(D, sigma: float, h: float) -> SigmaSolution:
    """Closed-form minimizer ``lam`` of the reduced objective, in O(d)."""
    D = _check_increasing(D)
    d = D.size
    if sigma <= 0 or h <= 0:
        raise ValueError("sigma and h must be positive")
    h2 = h * h
    trace = math.fsum(D)
    if trace < 0:
        raise NegativeTrace("curvature trace is negative; negate H first")
    if trace == 0:
        return SigmaSolution(np.full(d, h2), 0.0, d)

    K = _pinned_count(D)
    sqrtD = np.sqrt(np.where(D > TINY_CURVATURE, D, 0.0))
    if K == 0:
        D1 = float(D[0])
        a = _quartic_a(D1, float(np.sum(sqrtD[1:])), d, sigma)
        lam1 = _lambda_first(a, D1, d, sigma)
        lam = np.empty(d)
        lam[0] = lam1
        lam[1:] = sigma * np.sqrt(2 * d * lam1 / (a * D[1:]))
        if np.all(lam <= h2):
            return SigmaSolution(lam, float(np.dot(D, lam)), 0)

    start = max(K, 1)
    if start < d:
        # Candidates for every J in [start, d) at O(1) each; the first feasible wins.
        J = np.arange(start, d)
        suffix = np.cumsum(sqrtD[::-1])[::-1]
        prefix = np.cumsum(D)
        k1 = sigma * math.sqrt(2 * d * h2) * suffix[J]
        k2 = h2 * prefix[J - 1]
        a = _positive_cubic_root(k1, k2) ** 2
        lam_next = sigma * np.sqrt(2 * d * h2 / (a * D[J]))
        ok = np.flatnonzero(lam_next <= h2)
        if ok.size:
            i = int(ok[0])
            Jstar, astar = int(J[i]), float(a[i])
            lam = np.empty(d)
            lam[:Jstar] = h2
            lam[Jstar:] = sigma * np.sqrt(2 * d * h2 / (astar * D[Jstar:]))
            return SigmaSolution(lam, astar, Jstar)

    lam = np.full(d, h2)
    return SigmaSolution(lam, float(h2 * trace), d)


def sigma_objective(lam, D, sigma: float, h: float) -> float:
    """Reduced objective in ``lam = Sigma^2``; ``inf`` off ``0 < lam <= h^2``."""
    lam = np.asarray(lam, dtype=float)
    D = np.asarray(D, dtype=float)
    if np.any(lam <= 0) or np.any(lam > h * h * (1 + 1e-12)):
        return np.inf
    d = lam.size
    lmax = lam.max()
    a = float(np.dot(D, lam))
    return a * a / (4 * d * lmax) + sigma**2 * float(np.sum(1 / lam)) + sigma**2 * d / lmax


def hadamard(d: int, k: int = 1) -> np.ndarray:
    """Orthogonal Hadamard matrix with entries ``+-1/sqrt(d)`` and column ``k`` positive.

    Sylvester's construction, then rows and columns ``1`` and ``k`` swapped
    (1-based), which keeps the matrix symmetric so row ``k`` is positive too.
    """
    if not isinstance(d, (int, np.integer)) or not is_power_of_two(int(d)):
        raise NotPowerOfTwo(f"Hadamard order must be a power of two, got {d}")
    if not 1 <= k <= d:
        raise ValueError(f"column index {k} outside 1..{d}")
    M = np.ones((1, 1))
    while M.shape[0] < d:
        M = np.block([[M, M], [M, -M]])
    perm = np.arange(d)
    perm[0], perm[k - 1] = k - 1, 0
    M = M[np.ix_(perm, perm)]
    return M * (1 / math.sqrt(d))


def _solve_in_basis(R, D, sigma, h):
    """Optimal ``S`` for eigenpairs ``(R, D)`` with ``D`` increasing."""
    negated = math.fsum(D) < 0
    if negated:
        sol = get_sigma_star(-D[::-1], sigma, h)
        Sigma = np.sqrt(sol.lam[::-1])
    else:
        sol = get_sigma_star(D, sigma, h)
        Sigma = np.sqrt(sol.lam)
    k = int(np.argmax(Sigma)) + 1
    V = hadamard(D.size, k)
    S = (R * Sigma[None, :]) @ V.T
    return S, Sigma, V, sol, negated


def casg_sample_set(spec: CurvatureSpec, x0):
    """Optimal sample set around ``x0`` for a power-of-two dimension."""
    d = spec.dim
    if not is_power_of_two(d):
        raise NotPowerOfTwo(f"dimension {d} is not a power of two; use ecasg")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != d:
        raise ValueError(f"x0 has dimension {x0.size}, spec has {d}")
    if not np.all(np.isfinite(x0)):
        raise NonFiniteInput("x0 contains non-finite entries")
    if spec.sigma <= 0:
        raise ValueError("sigma must be positive")
    S, Sigma, V, sol, negated = _solve_in_basis(spec.R, spec.D, spec.sigma, spec.h)
    result = CasgResult(
        S_star=S,
        R=spec.R,
        D=spec.D,
        U=np.eye(d),
        Sigma=Sigma,
        V=V,
        objective_value=objective(S, spec),
        negated=negated,
        solution=sol,
    )
    return SampleSet.from_differences(x0, S), result


def lower_bound(spec: CurvatureSpec, Sigma) -> float:
    """Lower bound on the objective over all ``V`` at ``U = I``.

    ``Sigma`` holds the singular values ordered like ``spec.D``.
    """
    Sigma = np.asarray(Sigma, dtype=float).reshape(-1)
    if np.any(Sigma <= 0) or np.any(Sigma > spec.h * (1 + 1e-12)):
        return np.inf
    return sigma_objective(Sigma**2, spec.D, spec.sigma, np.inf)
