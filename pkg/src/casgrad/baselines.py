"""Reference estimators: objective-optimal forward differences and central differences.

"Optimal" forward differences minimize the same MSE objective as CASG but
restricted to diagonal difference matrices, using only the diagonal of the
Hessian. Per coordinate that is ``t^2 H_ii^2 / 4 + 2 sigma^2 / t^2`` with
``t <= h``, minimized by ``t = min(h, (8 sigma^2 / H_ii^2)^(1/4))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteInput
from .history import EvaluationHistory
from .simplex_core import CurvatureSpec, SampleSet, difference_matrix, simplex_gradient

__all__ = ["FdSteps", "fd_steps", "fd_sample_set", "fd_estimate", "cd_estimate", "cd_noise_error"]


@dataclass(frozen=True)
class FdSteps:
    t: np.ndarray


def fd_steps(diag_H, sigma: float, h: float) -> np.ndarray:
    diag_H = np.abs(np.asarray(diag_H, dtype=float))
    t = np.full(diag_H.shape, float(h))
    nz = diag_H > 0
    t[nz] = np.minimum(h, (8 * sigma**2 / diag_H[nz] ** 2) ** 0.25)
    return t


def fd_sample_set(spec: CurvatureSpec, x0):
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x0)):
        raise NonFiniteInput("x0 contains non-finite entries")
    if spec.sigma <= 0:
        raise ValueError("sigma must be positive")
    t = fd_steps(np.diag(spec.H), spec.sigma, spec.h)
    # sigma -> 0 drives t -> 0; keep the steps representable.
    t = np.maximum(t, np.finfo(float).tiny)
    return SampleSet.from_differences(x0, np.diag(t)), FdSteps(t)


def fd_estimate(f, sample: SampleSet):
    """Simplex gradient from one evaluation of each of the ``d+1`` points."""
    hist = EvaluationHistory(sample.dim)
    pts = sample.all_points()
    vals = np.empty(len(pts))
    for i, p in enumerate(pts):
        vals[i] = f(p)
        hist.append(p, vals[i])
    g = simplex_gradient(difference_matrix(sample), vals[1:] - vals[0])
    return g, hist


def cd_estimate(f, x0, h_step: float):
    """Coordinate central differences ``(f(x+h e_i) - f(x-h e_i)) / 2h``; 2d evaluations."""
    if h_step <= 0:
        raise ValueError("h_step must be positive")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    d = x0.size
    hist = EvaluationHistory(d)
    g = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h_step
        fp = f(x0 + e)
        hist.append(x0 + e, fp)
        fm = f(x0 - e)
        hist.append(x0 - e, fm)
        g[i] = (fp - fm) / (2 * h_step)
    return g, hist


def cd_noise_error(d: int, sigma: float, h_step: float) -> float:
    """Variance part of the central-difference MSE: ``d sigma^2 / (2 h^2)``."""
    return d * sigma**2 / (2 * h_step**2)
