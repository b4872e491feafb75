"""Likelihoods of the form  phi(y1 - X1 beta; S1) * Phi(y0 + X0 beta; S0).

Every supported model maps its data onto a Gaussian-density block
(y1, X1, S1) and a Gaussian-CDF block (y0, X0, S0). S0 is block diagonal
and ``partition`` lists the sizes of its diagonal blocks, which is what the
approximations factorize over. ``c_const`` is the log of the constant that
turns the product above into the actual likelihood (zero for Gaussian
utilities, n log 2 for skew-normal ones).
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._linalg import chol, log_gauss_density
from .errors import (
    DimensionMismatch,
    FewerThanTwoCategories,
    MixedDimensions,
    NegativeResponse,
    NonBinaryResponse,
    NonPositiveVariance,
    SigmaDimMismatch,
)
from .mvn_kernel import mvn_cdf_shifted
from .sun_core import SunParams


@dataclass(frozen=True)
class Dataset:
    """Design and responses.

    ``X`` is n x p, or n x m x p when each unit has its own m x p design
    (multivariate responses). ``y`` is a length-n vector or an n x m matrix.
    """

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != y.shape[0] or y.shape[0] < 1:
            raise DimensionMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.y.shape[0]


@dataclass(frozen=True)
class GaussBlock:
    y: np.ndarray
    X: np.ndarray
    Sigma: np.ndarray


@dataclass(frozen=True)
class CdfBlock:
    y: np.ndarray
    X: np.ndarray
    Sigma: np.ndarray
    partition: tuple


@dataclass(frozen=True)
class UnifiedLikelihood:
    p: int
    gauss: GaussBlock | None = None
    cdf: CdfBlock | None = None
    c_const: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.gauss is not None:
            g = self.gauss
            n1 = g.y.shape[0]
            if g.X.shape != (n1, self.p) or g.Sigma.shape != (n1, n1):
                raise DimensionMismatch("Gaussian block dimensions disagree")
        if self.cdf is not None:
            c = self.cdf
            n0 = c.y.shape[0]
            if c.X.shape != (n0, self.p) or c.Sigma.shape != (n0, n0):
                raise DimensionMismatch("CDF block dimensions disagree")
            if sum(c.partition) != n0 or any(k < 1 for k in c.partition):
                raise DimensionMismatch("partition does not sum to the CDF block size")
            mask = np.zeros((n0, n0), dtype=bool)
            for sl in _slices(c.partition):
                mask[sl, sl] = True
            if np.any(c.Sigma[~mask] != 0):
                raise DimensionMismatch("CDF covariance is not block diagonal on the partition")

    @property
    def n1(self):
        return 0 if self.gauss is None else self.gauss.y.shape[0]

    @property
    def n0(self):
        return 0 if self.cdf is None else self.cdf.y.shape[0]

    @property
    def partition(self):
        return () if self.cdf is None else self.cdf.partition

    def blocks(self):
        """Slices of the CDF block, one per partition element."""
        return list(_slices(self.partition))


def _slices(partition):
    start = 0
    for k in partition:
        yield slice(start, start + k)
        start += k


def make_likelihood(p, gauss=None, cdf=None, partition=None, c_const=0.0, meta=None):
    """Assemble from raw (y, X, Sigma) tuples; empty blocks are dropped."""
    g = c = None
    if gauss is not None and np.size(gauss[0]) > 0:
        y1, X1, S1 = (np.asarray(a, dtype=float) for a in gauss)
        g = GaussBlock(np.atleast_1d(y1), X1.reshape(-1, p), np.atleast_2d(S1))
    if cdf is not None and np.size(cdf[0]) > 0:
        y0, X0, S0 = (np.asarray(a, dtype=float) for a in cdf)
        y0 = np.atleast_1d(y0)
        part = tuple(int(k) for k in partition) if partition is not None else (1,) * y0.shape[0]
        c = CdfBlock(y0, X0.reshape(-1, p), np.atleast_2d(S0), part)
    return UnifiedLikelihood(p, g, c, float(c_const), meta or {})


def log_likelihood(lik, beta):
    """log of the likelihood at beta, CDF block evaluated one partition block at a time."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (lik.p,):
        raise DimensionMismatch(f"beta must have length {lik.p}")
    out = lik.c_const
    if lik.gauss is not None:
        g = lik.gauss
        out += log_gauss_density(g.y - g.X @ beta, g.Sigma)
    if lik.cdf is not None:
        c = lik.cdf
        u = c.y + c.X @ beta
        for sl in lik.blocks():
            k = sl.stop - sl.start
            out += mvn_cdf_shifted(u[sl], np.zeros(k), c.Sigma[sl, sl]).log_value
    return float(out)


def _check_sigma2(sigma2):
    if not (np.isscalar(sigma2) and sigma2 > 0):
        raise NonPositiveVariance(f"noise variance must be a positive scalar, got {sigma2!r}")
    return float(sigma2)


def _binary(y):
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise NonBinaryResponse("responses must be 0/1")
    return y


def _unit_designs(data, m):
    """Per-unit m x p designs; a plain n x p X means separate coefficients per outcome."""
    if data.X.ndim == 3:
        if data.X.shape[1] != m:
            raise DimensionMismatch("per-unit designs must have m rows")
        return data.X
    eye = np.eye(m)
    return np.stack([np.kron(eye, x[None, :]) for x in data.X])


def build_linear(data, sigma2):
    """Gaussian linear regression; matrix responses use S1 = I_n kron Sigma."""
    if data.y.ndim == 2:
        m = data.y.shape[1]
        S = np.atleast_2d(np.asarray(sigma2, dtype=float))
        if S.shape != (m, m):
            raise SigmaDimMismatch(f"Sigma must be {m} x {m}")
        try:
            chol(S)
        except Exception as exc:
            raise NonPositiveVariance("Sigma is not positive definite") from exc
        Xs = _unit_designs(data, m)
        p = Xs.shape[2]
        return make_likelihood(p, (data.y.reshape(-1), Xs.reshape(-1, p),
                                   np.kron(np.eye(data.n), S)))
    s2 = _check_sigma2(sigma2)
    return make_likelihood(data.X.shape[1], (data.y, data.X, s2 * np.eye(data.n)))


def build_probit(data, sigma2=1.0):
    y = _binary(data.y)
    s2 = _check_sigma2(sigma2)
    X0 = (2 * y - 1)[:, None] * data.X
    return make_likelihood(data.X.shape[1], cdf=(np.zeros(data.n), X0, s2 * np.eye(data.n)))


def build_probit_threshold(data, z_t, sigma2=1.0):
    """Probit with latent threshold z_t instead of 0."""
    y = _binary(data.y)
    s2 = _check_sigma2(sigma2)
    sign = 2 * y - 1
    return make_likelihood(data.X.shape[1],
                           cdf=(-z_t * sign, sign[:, None] * data.X, s2 * np.eye(data.n)))


def build_multivariate_probit(data, Sigma):
    y = _binary(data.y)
    if y.ndim != 2:
        raise DimensionMismatch("multivariate probit needs an n x m response matrix")
    n, m = y.shape
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    if Sigma.shape != (m, m):
        raise SigmaDimMismatch(f"Sigma must be {m} x {m}, got {Sigma.shape}")
    Xs = _unit_designs(data, m)
    p = Xs.shape[2]
    B = (2 * y - 1).reshape(-1)
    X0 = B[:, None] * Xs.reshape(-1, p)
    S0 = linalg.block_diag(*[np.outer(b, b) * Sigma for b in (2 * y - 1)])
    return make_likelihood(p, cdf=(np.zeros(n * m), X0, S0), partition=(m,) * n)


def build_multinomial_probit(data, Sigma=None):
    """Multinomial probit with argmax utilities and the last category's coefficients at 0.

    Labels are 1..L with L inferred from Sigma (or from max(y) when Sigma is
    omitted, in which case Sigma = I_L). beta stacks beta_1, ..., beta_{L-1}.
    """
    y = np.asarray(data.y)
    if y.ndim != 1 or np.any(y != np.round(y)) or np.any(y < 1):
        raise DimensionMismatch("categorical labels must be integers in 1..L")
    y = y.astype(int)
    if Sigma is None:
        L = int(y.max())
        Sigma = np.eye(L)
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    L = Sigma.shape[0]
    if L < 2:
        raise FewerThanTwoCategories("need at least two categories")
    if Sigma.shape != (L, L):
        raise SigmaDimMismatch("Sigma must be square")
    if np.any(y > L):
        raise DimensionMismatch(f"labels exceed the number of categories {L}")
    X = data.X
    p = X.shape[1]
    eye = np.eye(L)
    rows, blocks = [], []
    for i in range(data.n):
        l = y[i] - 1
        xl = np.kron(eye[l, :L - 1], X[i])
        V = []
        for k in range(L):
            if k == l:
                continue
            rows.append(xl - np.kron(eye[k, :L - 1], X[i]))
            V.append(eye[k] - eye[l])
        V = np.array(V)
        blocks.append(V @ Sigma @ V.T)
    n0 = data.n * (L - 1)
    return make_likelihood(p * (L - 1), cdf=(np.zeros(n0), np.array(rows),
                                             linalg.block_diag(*blocks)),
                           partition=(L - 1,) * data.n)


def build_tobit(data, sigma2):
    """Tobit censored at 0: y == 0 marks a censored unit."""
    y = data.y
    if np.any(y < 0):
        raise NegativeResponse("tobit responses must be nonnegative")
    s2 = _check_sigma2(sigma2)
    obs = y > 0
    X1, X0 = data.X[obs], data.X[~obs]
    n1, n0 = X1.shape[0], X0.shape[0]
    p = data.X.shape[1]
    return make_likelihood(p, (y[obs], X1, s2 * np.eye(n1)),
                           (np.zeros(n0), -X0, s2 * np.eye(n0)),
                           meta={"observed": obs})


def _sn_lambda(sigma2, alpha):
    s = math.sqrt(sigma2)
    return s * alpha / math.sqrt(1 + alpha**2) * (np.ones((2, 2)) - np.eye(2))


def build_sn_linear(data, sigma2, alpha):
    """Linear regression with skew-normal errors of shape alpha."""
    s2 = _check_sigma2(sigma2)
    n, p = data.n, data.X.shape[1]
    S = s2 * np.eye(n)
    return make_likelihood(p, (data.y, data.X, S), (alpha * data.y, -alpha * data.X, S),
                           c_const=n * math.log(2))


def build_sn_probit(data, sigma2, alpha):
    """Probit with skew-normal latent utilities."""
    y = _binary(data.y)
    s2 = _check_sigma2(sigma2)
    n, p = data.n, data.X.shape[1]
    sign = 2 * y - 1
    X0 = np.zeros((2 * n, p))
    X0[0::2] = sign[:, None] * data.X
    S = np.diag([s2, 1.0])
    Lam = _sn_lambda(s2, alpha)
    S0 = np.kron(np.eye(n), S) + np.kron(np.diag(sign), Lam)
    return make_likelihood(p, cdf=(np.zeros(2 * n), X0, S0), partition=(2,) * n,
                           c_const=n * math.log(2))


def build_sn_tobit(data, sigma2, alpha):
    """Tobit with skew-normal latent utilities, censored at 0."""
    y = data.y
    if np.any(y < 0):
        raise NegativeResponse("tobit responses must be nonnegative")
    s2 = _check_sigma2(sigma2)
    obs = y > 0
    X1, Xc = data.X[obs], data.X[~obs]
    n1, n0 = X1.shape[0], Xc.shape[0]
    p = data.X.shape[1]
    X0 = np.zeros((2 * n0, p))
    X0[0::2] = Xc
    y0 = np.concatenate([alpha * y[obs], np.zeros(2 * n0)])
    Xbar0 = -np.vstack([alpha * X1, X0])
    S0 = linalg.block_diag(s2 * np.eye(n1),
                           np.kron(np.eye(n0), np.diag([s2, 1.0]) - _sn_lambda(s2, alpha)))
    return make_likelihood(p, (y[obs], X1, s2 * np.eye(n1)), (y0, Xbar0, S0),
                           partition=(1,) * n1 + (2,) * n0, c_const=data.n * math.log(2),
                           meta={"observed": obs})


_GP_KINDS = {
    "linear": build_linear,
    "probit": build_probit,
    "tobit": build_tobit,
}


def build_gp(Omega_k, xi_k, y, kind="linear", **kw):
    """Gaussian-process model: beta = f(x_1..x_n) with an identity design.

    Returns the likelihood of the requested kind and the N(xi_k, Omega_k) prior.
    """
    Omega_k = np.atleast_2d(np.asarray(Omega_k, dtype=float))
    n = Omega_k.shape[0]
    xi_k = np.zeros(n) if xi_k is None else np.asarray(xi_k, dtype=float)
    if kind not in _GP_KINDS:
        raise ValueError(f"unknown kind {kind!r}; choose from {sorted(_GP_KINDS)}")
    prior = SunParams(xi_k, Omega_k)
    return _GP_KINDS[kind](Dataset(np.eye(n), y), **kw), prior


def concat_likelihoods(parts):
    """Product of independent likelihood factors sharing one coefficient vector."""
    parts = list(parts)
    if not parts:
        raise ValueError("need at least one likelihood")
    p = parts[0].p
    if any(q.p != p for q in parts):
        raise MixedDimensions("all parts must share the coefficient dimension")
    if len(parts) == 1:
        return parts[0]
    gs = [q.gauss for q in parts if q.gauss is not None]
    cs = [q.cdf for q in parts if q.cdf is not None]
    gauss = cdf = None
    partition = None
    if gs:
        gauss = (np.concatenate([g.y for g in gs]), np.vstack([g.X for g in gs]),
                 linalg.block_diag(*[g.Sigma for g in gs]))
    if cs:
        cdf = (np.concatenate([c.y for c in cs]), np.vstack([c.X for c in cs]),
               linalg.block_diag(*[c.Sigma for c in cs]))
        partition = sum((c.partition for c in cs), ())
    return make_likelihood(p, gauss, cdf, partition, sum(q.c_const for q in parts))
