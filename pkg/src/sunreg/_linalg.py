"""Small dense linear-algebra helpers shared by the modules."""

import numpy as np
from scipy import linalg

from .config import CONFIG
from .errors import NonPositiveDefinite


def symmetrize(a):
    return 0.5 * (a + a.T)


def chol(a, jitter_min=None, jitter_max=None):
    """Lower Cholesky factor with a geometric jitter ladder.

    Tries the plain factorization first, then adds ``eps * tr(a)/d * I`` with
    eps running from jitter_min to jitter_max in factors of ten.
    Returns ``(L, jitter)`` where jitter is the absolute amount added.
    """
    jitter_min = CONFIG.jitter_min if jitter_min is None else jitter_min
    jitter_max = CONFIG.jitter_max if jitter_max is None else jitter_max
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    if d == 0:
        return np.zeros((0, 0)), 0.0
    try:
        return linalg.cholesky(a, lower=True), 0.0
    except linalg.LinAlgError:
        pass
    scale = np.trace(a) / d
    if not np.isfinite(scale) or scale <= 0:
        raise NonPositiveDefinite("matrix has non-positive trace")
    eps = jitter_min
    eye = np.eye(d)
    while eps <= jitter_max * (1 + 1e-9):
        try:
            return linalg.cholesky(a + eps * scale * eye, lower=True), eps * scale
        except linalg.LinAlgError:
            eps *= 10
    raise NonPositiveDefinite(f"Cholesky failed after jitter up to {jitter_max:g}*tr/d")


def chol_solve(L, b):
    """Solve (L L^T) x = b given the lower factor."""
    return linalg.cho_solve((L, True), b)


def logdet_from_chol(L):
    return 2.0 * np.sum(np.log(np.diag(L)))


def spd_inv(a):
    L, _ = chol(a)
    return chol_solve(L, np.eye(a.shape[0]))


def log_gauss_density(x, cov):
    """log N(x; 0, cov) for a vector x, or for each row of a 2-d array."""
    x = np.asarray(x, dtype=float)
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    if d == 0:
        return 0.0 if x.ndim <= 1 else np.zeros(x.shape[0])
    L, _ = chol(cov)
    z = linalg.solve_triangular(L, np.atleast_2d(x).T, lower=True)
    quad = np.sum(z**2, axis=0)
    out = -0.5 * quad - 0.5 * d * np.log(2 * np.pi) - 0.5 * logdet_from_chol(L)
    return out if x.ndim == 2 else float(out[0])


def as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def seed_of(rng):
    """Integer seed if the caller passed one, else None."""
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return None
