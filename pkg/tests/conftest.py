import math

import numpy as np
import pytest
from scipy.optimize import brentq


def random_orthogonal(rng, d):
    Q, R = np.linalg.qr(rng.normal(size=(d, d)))
    return Q * np.sign(np.diag(R))


def random_symmetric(rng, d, scale_range=(-3, 3), indefinite=True):
    mags = 10.0 ** rng.uniform(*scale_range, size=d)
    signs = rng.choice([-1.0, 1.0], size=d) if indefinite else np.ones(d)
    Q = random_orthogonal(rng, d)
    return Q @ np.diag(signs * mags) @ Q.T


def batched_objective(S, H, sigma, h):
    """Objective for a stack of difference matrices, computed with explicit inverses."""
    S = np.asarray(S, dtype=float)
    n, d, _ = S.shape
    Sinv = np.linalg.inv(S)  # (n, d, d)
    SinvT = np.transpose(Sinv, (0, 2, 1))
    curv = np.einsum("nji,jk,nki->ni", S, H, S)
    ae = 0.25 * np.sum(np.einsum("nij,nj->ni", SinvT, curv) ** 2, axis=1)
    ones = SinvT.sum(axis=2)
    ne = sigma**2 * (np.sum(Sinv**2, axis=(1, 2)) + np.sum(ones**2, axis=1))
    norms = np.linalg.norm(S, 2, axis=(1, 2))
    cond = np.linalg.cond(S)
    out = ae + ne
    out[(norms > h * (1 + 1e-12)) | (cond > 1e12)] = np.inf
    return out


def reduced_objective(lam, D, sigma):
    d = lam.size
    lmax = lam.max()
    a = float(D @ lam)
    return a * a / (4 * d * lmax) + sigma**2 * np.sum(1 / lam) + sigma**2 * d / lmax


def _bracket(fn):
    """Bracket the sign change of an increasing function on (0, inf)."""
    lo = hi = 1.0
    while fn(lo) > 0:
        lo /= 4
    while fn(hi) < 0:
        hi *= 4
    return lo, hi


def naive_sigma_star(D, sigma, h):
    """Reference solver: every active set, scalar root by bracketing, best true objective.

    Returns ``(lam, J)``. Works directly from the stationarity conditions and
    never uses the closed-form roots.
    """
    D = np.asarray(D, dtype=float)
    d = D.size
    h2 = h * h
    trace = math.fsum(D)
    if trace == 0:
        return np.full(d, h2), d
    pinned = int(np.count_nonzero(D <= 1e-300))
    candidates = [(np.full(d, h2), d)]
    for J in range(pinned, d):
        Dfree = D[J:]
        if J == 0:
            D1 = D[0]
            C = float(np.sum(np.sqrt(D[1:])))

            def lam1(a):
                return 2 * d / (a * D1) * (a * a / (4 * d) + sigma**2 * (d + 1))

            def psi(a):
                return a - D1 * lam1(a) - sigma * math.sqrt(2 * d) * C * math.sqrt(lam1(a) / a)

            lo, hi = _bracket(psi)
            a = brentq(psi, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=2000)
            lam = np.empty(d)
            lam[0] = lam1(a)
            lam[1:] = sigma * np.sqrt(2 * d * lam[0] / (a * D[1:]))
        else:
            c2 = float(np.sum(D[:J]))
            c1 = float(np.sum(np.sqrt(Dfree)))
            k = sigma * math.sqrt(2 * d * h2) * c1

            def phi(a):
                return a - h2 * c2 - k / math.sqrt(a)

            lo, hi = _bracket(phi)
            a = brentq(phi, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=2000)
            lam = np.empty(d)
            lam[:J] = h2
            lam[J:] = sigma * np.sqrt(2 * d * h2 / (a * Dfree))
        if np.all(lam <= h2 * (1 + 1e-12)) and np.all(lam > 0):
            candidates.append((lam, J))
    vals = [reduced_objective(lam, D, sigma) for lam, _ in candidates]
    i = int(np.argmin(vals))
    return candidates[i]


def random_curvatures(rng, d):
    """Increasing curvatures with mixed magnitudes and signs, positive trace."""
    while True:
        D = np.sort(10.0 ** rng.uniform(-4, 4, size=d) * rng.choice([1.0, 1.0, -1.0], size=d))
        if d > 1 and rng.random() < 0.2:
            D[: rng.integers(1, d)] = 0.0
            D = np.sort(D)
        if math.fsum(D) > 0:
            return D


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
