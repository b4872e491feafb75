"""Unified skew-normal (SUN) distributions.

A SUN_{p,n}(xi, Omega, Delta, gamma, Gamma) vector admits the additive form

    beta = xi + omega (U0 + Delta Gamma^{-1} U1),

with U0 ~ N(0, Omega_bar - Delta Gamma^{-1} Delta^T) and U1 ~ N(0, Gamma)
truncated to U1 >= -gamma. Everything here (density, MGF, CDF, moments,
sampling) reduces to Gaussian algebra plus calls into ``mvn_kernel``.

Storage is canonical: Gamma is always a correlation matrix. Two
parameterizations describe the same law when (xi, Omega, omega Delta, gamma,
Gamma) agree, which is what ``params_allclose`` compares.
"""

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from ._linalg import as_rng, chol, chol_solve, log_gauss_density, seed_of, symmetrize
from .config import CONFIG
from .errors import DimensionMismatch, EmptyIndexSet, NonPositiveDefinite, RankDeficient
from .mvn_kernel import (
    McdfResult,
    TruncNormalSpec,
    mvn_cdf,
    mvn_cdf_shifted,
    sample_tmvn,
    tn_moments,
)


@dataclass(frozen=True)
class LatentForm:
    """Latent-utility view of a SUN.

    Marginally z ~ N(gamma, Gamma) truncated to z >= 0 and
    beta | z ~ N(xi + A (z - gamma), V); conditionally on beta,
    z ~ N(eta + X beta, Sigma) truncated to z >= 0. The pieces:
      X     = (omega Delta)^T Omega^{-1}            (n x p)
      eta   = gamma - X xi
      Sigma = Gamma - X omega Delta                 (n x n)
      A     = omega Delta Gamma^{-1}                (p x n)
      V     = Omega - A Delta^T omega               (p x p)
    """

    X: np.ndarray
    eta: np.ndarray
    Sigma: np.ndarray
    A: np.ndarray
    V: np.ndarray


@dataclass(frozen=True)
class SunParams:
    xi: np.ndarray
    Omega: np.ndarray
    Delta: np.ndarray = None
    gamma: np.ndarray = None
    Gamma: np.ndarray = None
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        p = xi.shape[0]
        Omega = np.atleast_2d(np.asarray(self.Omega, dtype=float))
        if Omega.shape != (p, p):
            raise DimensionMismatch(f"Omega is {Omega.shape}, expected {(p, p)}")
        if self.Delta is None or np.size(self.Delta) == 0:
            Delta = np.zeros((p, 0))
            gamma = np.zeros(0)
            Gamma = np.zeros((0, 0))
        else:
            Delta = np.asarray(self.Delta, dtype=float).reshape(p, -1)
            n = Delta.shape[1]
            gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
            Gamma = np.atleast_2d(np.asarray(self.Gamma, dtype=float))
            if gamma.shape != (n,) or Gamma.shape != (n, n):
                raise DimensionMismatch(
                    f"Delta {Delta.shape}, gamma {gamma.shape}, Gamma {Gamma.shape} disagree")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "Omega", symmetrize(Omega))
        object.__setattr__(self, "Delta", Delta)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "Gamma", symmetrize(Gamma))
        if self.check:
            self._validate()

    def _validate(self):
        if np.any(~(np.diag(self.Omega) > 0)):
            raise NonPositiveDefinite("Omega has non-positive diagonal")
        chol(self.Omega)
        if self.nbar:
            if np.any(np.abs(np.diag(self.Gamma) - 1.0) > 1e-8):
                raise ValueError("Gamma must have unit diagonal")
            # the joint correlation matrix of (U0 + Delta Gamma^{-1} U1, U1) must be valid
            chol(np.block([[self.Omega_bar, self.Delta], [self.Delta.T, self.Gamma]]))

    @property
    def p(self):
        return self.xi.shape[0]

    @property
    def nbar(self):
        return self.gamma.shape[0]

    @cached_property
    def omega(self):
        return np.sqrt(np.diag(self.Omega))

    @cached_property
    def Omega_bar(self):
        ob = self.Omega / np.outer(self.omega, self.omega)
        np.fill_diagonal(ob, 1.0)
        return ob

    @cached_property
    def omega_delta(self):
        return self.omega[:, None] * self.Delta

    @cached_property
    def chol_Omega(self):
        return chol(self.Omega)[0]

    @cached_property
    def latent(self):
        p, n = self.p, self.nbar
        if n == 0:
            return LatentForm(np.zeros((0, p)), np.zeros(0), np.zeros((0, 0)),
                              np.zeros((p, 0)), self.Omega)
        wd = self.omega_delta
        X = chol_solve(self.chol_Omega, wd).T
        Lg, _ = chol(self.Gamma)
        A = chol_solve(Lg, wd.T).T
        Sigma = symmetrize(self.Gamma - X @ wd)
        V = symmetrize(self.Omega - A @ wd.T)
        return LatentForm(X, self.gamma - X @ self.xi, Sigma, A, V)

    @cached_property
    def log_norm_const(self):
        """log Phi_nbar(gamma; Gamma)."""
        if self.nbar == 0:
            return 0.0
        return mvn_cdf(self.gamma, self.Gamma).log_value

    def to_dict(self):
        return {
            "xi": self.xi.tolist(),
            "omega_mat": self.Omega.tolist(),
            "delta": self.Delta.tolist(),
            "gamma": self.gamma.tolist(),
            "gamma_corr": self.Gamma.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        delta = np.asarray(d.get("delta", []), dtype=float)
        if delta.size == 0:
            return cls(d["xi"], d["omega_mat"])
        return cls(d["xi"], d["omega_mat"], delta, d["gamma"], d["gamma_corr"])

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class SunSample:
    draws: np.ndarray
    seed: int | None
    meta: dict = field(default_factory=dict)


def gaussian(xi, Omega):
    """A SUN with nbar = 0, i.e. N(xi, Omega)."""
    return SunParams(xi, Omega)


def params_allclose(a, b, rtol=1e-8, atol=1e-10):
    if a.p != b.p or a.nbar != b.nbar:
        return False
    pairs = [(a.xi, b.xi), (a.Omega, b.Omega), (a.omega_delta, b.omega_delta),
             (a.gamma, b.gamma), (a.Gamma, b.Gamma)]
    return all(np.allclose(x, y, rtol=rtol, atol=atol) for x, y in pairs)


def _check_beta(params, beta):
    beta = np.asarray(beta, dtype=float)
    if beta.shape[-1] != params.p:
        raise DimensionMismatch(f"beta has {beta.shape[-1]} coordinates, expected {params.p}")
    return beta


def sun_log_density(params, beta):
    """log density at beta (a p-vector, or an m x p array of points)."""
    beta = _check_beta(params, beta)
    rows = np.atleast_2d(beta)
    dev = rows - params.xi
    out = np.atleast_1d(log_gauss_density(dev, params.Omega))
    if params.nbar:
        lat = params.latent
        upper = params.gamma + dev @ lat.X.T
        zero = np.zeros(params.nbar)
        out = out + np.array([mvn_cdf_shifted(u, zero, lat.Sigma).log_value for u in upper])
        out = out - params.log_norm_const
    return out if beta.ndim == 2 else float(out[0])


def sun_log_mgf(params, t):
    t = _check_beta(params, t)
    val = params.xi @ t + 0.5 * t @ params.Omega @ t
    if params.nbar:
        val += mvn_cdf(params.gamma + params.omega_delta.T @ t, params.Gamma).log_value
        val -= params.log_norm_const
    return float(val)


def sun_mgf(params, t):
    return math.exp(sun_log_mgf(params, t))


def sun_moments(params, *, max_dim=None, rel_accuracy=1e-5):
    """Exact mean and covariance.

    The truncated component U1 of the additive representation carries all
    the non-Gaussian structure: mean = xi + A E[U1] and
    cov = V + A var(U1) A^T with A = omega Delta Gamma^{-1}.
    """
    if params.nbar == 0:
        return params.xi.copy(), params.Omega.copy()
    max_dim = CONFIG.sun_dim_cap if max_dim is None else max_dim
    lat = params.latent
    tm = tn_moments(TruncNormalSpec(-params.gamma, np.zeros(params.nbar), params.Gamma),
                    max_dim=max_dim, rel_accuracy=rel_accuracy)
    mean = params.xi + lat.A @ tm.mean
    cov = symmetrize(lat.V + lat.A @ tm.cov @ lat.A.T)
    return mean, cov


def gaussian_draws(cov, n, rng):
    L, _ = chol(cov)
    return rng.standard_normal((n, cov.shape[0])) @ L.T


def sun_sample(params, n, rng=None):
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    seed = seed_of(rng)
    rng = as_rng(rng)
    lat = params.latent
    meta = {"method": "gaussian"}
    draws = params.xi + gaussian_draws(lat.V, n, rng)
    if params.nbar:
        spec = TruncNormalSpec(-params.gamma, np.zeros(params.nbar), params.Gamma)
        res = sample_tmvn(spec, n, rng, return_info=True)
        draws += res.draws @ lat.A.T
        meta = {"method": res.method, "acceptance": res.acceptance}
    return SunSample(draws, seed, meta)


def _combine_ratio(num, den):
    lv = num.log_value - den.log_value
    val = math.exp(lv) if lv > -745 else 0.0
    rel = 0.0
    if num.value > 0:
        rel += (num.std_error / num.value) ** 2
    if den.value > 0:
        rel += (den.std_error / den.value) ** 2
    return McdfResult(min(val, 1.0), min(lv, 0.0), val * math.sqrt(rel),
                      num.n_samples + den.n_samples)


def sun_cdf(params, b, accuracy=None):
    """P(beta <= b)."""
    b = _check_beta(params, b)
    z = (b - params.xi) / params.omega
    if params.nbar == 0:
        return mvn_cdf(z, params.Omega_bar, accuracy)
    if params.p + params.nbar > CONFIG.sun_dim_cap:
        raise ValueError("p + nbar exceeds the CDF dimension cap")
    big = np.block([[params.Omega_bar, -params.Delta], [-params.Delta.T, params.Gamma]])
    num = mvn_cdf(np.concatenate([z, params.gamma]), big, accuracy)
    den = mvn_cdf(params.gamma, params.Gamma, accuracy)
    return _combine_ratio(num, den)


def sun_marginal(params, idx):
    idx = np.atleast_1d(np.asarray(idx, dtype=int))
    if idx.size == 0:
        raise EmptyIndexSet("index set is empty")
    if np.any(idx < 0) or np.any(idx >= params.p):
        raise DimensionMismatch("index out of range")
    if params.nbar == 0:
        return SunParams(params.xi[idx], params.Omega[np.ix_(idx, idx)], check=False)
    return SunParams(params.xi[idx], params.Omega[np.ix_(idx, idx)], params.Delta[idx],
                     params.gamma, params.Gamma, check=False)


def sun_linear(params, A, a=None):
    """Law of a + A beta, with A of shape d x p."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    if A.shape[1] != params.p:
        raise DimensionMismatch(f"A is {A.shape}, expected {d} x {params.p}")
    a = np.zeros(d) if a is None else np.atleast_1d(np.asarray(a, dtype=float))
    if np.linalg.matrix_rank(A) < d:
        raise RankDeficient("A must have full row rank")
    Om = symmetrize(A @ params.Omega @ A.T)
    try:
        linalg.cholesky(Om, lower=True)
    except linalg.LinAlgError as exc:
        raise RankDeficient("A Omega A^T is not positive definite") from exc
    if params.nbar == 0:
        return SunParams(a + A @ params.xi, Om)
    w = np.sqrt(np.diag(Om))
    return SunParams(a + A @ params.xi, Om, (A @ params.omega_delta) / w[:, None],
                     params.gamma, params.Gamma)
