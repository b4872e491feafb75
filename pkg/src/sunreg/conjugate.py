"""Exact conjugate updates of SUN priors under unified likelihoods.

The Gaussian-density block is absorbed first with a rank-n1 update of
(xi, Omega); the CDF block then appends n0 new latent coordinates to the
skewness part. The resulting bundle also carries the latent-utility form
of the posterior (X_post, eta_post, Sigma_post, V_post), assembled from the
update's own pieces so that no p x p inverse is ever formed.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._linalg import chol, chol_solve, log_gauss_density, symmetrize
from .errors import DimensionMismatch
from .model_builders import concat_likelihoods
from .mvn_kernel import mvn_cdf
from .sun_core import LatentForm, SunParams


@dataclass(frozen=True)
class PosteriorBundle:
    posterior: SunParams
    partition: tuple
    X_post: np.ndarray
    eta_post: np.ndarray
    Sigma_post: np.ndarray
    V_post: np.ndarray
    A_post: np.ndarray          # omega_post Delta_post Gamma_post^{-1}
    log_s0: np.ndarray
    log_s1: np.ndarray
    prior: SunParams
    lik: object
    log_gauss_evidence: float   # log N(y1; X1 xi, S1 + X1 Omega X1^T), 0 without that block

    @property
    def p(self):
        return self.posterior.p

    @property
    def n_latent(self):
        return self.posterior.nbar

    def blocks(self):
        out, start = [], 0
        for k in self.partition:
            out.append(slice(start, start + k))
            start += k
        return out

    def to_dict(self):
        d = self.posterior.to_dict()
        d.update(partition=list(self.partition), x_post=self.X_post.tolist(),
                 eta_post=self.eta_post.tolist(), sigma_post=self.Sigma_post.tolist(),
                 v_post=self.V_post.tolist())
        return d


def _gaussian_update(xi, Omega, y1, X1, S1):
    """Posterior (xi1, Omega1) and log evidence of y1 ~ N(X1 beta, S1), beta ~ N(xi, Omega)."""
    p, n1 = xi.shape[0], y1.shape[0]
    resid = y1 - X1 @ xi
    H = symmetrize(S1 + X1 @ Omega @ X1.T)
    log_ev = log_gauss_density(resid, H)
    if n1 < p:
        K = Omega @ X1.T
        Lh, _ = chol(H)
        Omega1 = Omega - K @ chol_solve(Lh, K.T)
        xi1 = xi + K @ chol_solve(Lh, resid)
    else:
        Lo, _ = chol(Omega)
        Ls, _ = chol(S1)
        SX = chol_solve(Ls, X1)
        P = chol_solve(Lo, np.eye(p)) + X1.T @ SX
        Lp, _ = chol(symmetrize(P))
        Omega1 = chol_solve(Lp, np.eye(p))
        xi1 = chol_solve(Lp, chol_solve(Lo, xi) + SX.T @ y1)
    return xi1, symmetrize(Omega1), log_ev


def _absorb_gauss(prior, gauss):
    """Returns (posterior, s1, T, log_evidence) where T = Omega^{-1} omega Delta of the prior."""
    p, nb = prior.p, prior.nbar
    if gauss is None:
        T = prior.latent.X.T
        return prior, np.ones(nb), T, 0.0
    if gauss.X.shape[1] != p:
        raise DimensionMismatch("Gaussian block has the wrong number of columns")
    xi1, Omega1, log_ev = _gaussian_update(prior.xi, prior.Omega, gauss.y, gauss.X, gauss.Sigma)
    if nb == 0:
        return SunParams(xi1, Omega1, check=False), np.ones(0), np.zeros((p, 0)), log_ev
    lat = prior.latent
    T = lat.X.T
    OT = Omega1 @ T
    M = symmetrize(lat.Sigma + T.T @ OT)
    s1 = np.sqrt(np.diag(M))
    Gamma1 = M / np.outer(s1, s1)
    np.fill_diagonal(Gamma1, 1.0)
    omega1 = np.sqrt(np.diag(Omega1))
    Delta1 = OT / omega1[:, None] / s1[None, :]
    gamma1 = (prior.gamma + T.T @ (xi1 - prior.xi)) / s1
    return SunParams(xi1, Omega1, Delta1, gamma1, Gamma1, check=False), s1, T, log_ev


def update_gaussian_block(prior, gauss):
    """Posterior of a SUN prior after observing y1 ~ N(X1 beta, S1)."""
    return _absorb_gauss(prior, gauss)[0]


def update(prior, lik):
    """Exact SUN posterior for a unified likelihood, with its latent form cached."""
    if lik.p != prior.p:
        raise DimensionMismatch(f"prior has dimension {prior.p}, likelihood {lik.p}")
    post1, s1, T, log_ev = _absorb_gauss(prior, lik.gauss)
    p, nb = prior.p, prior.nbar
    Omega1, xi1 = post1.Omega, post1.xi
    omega1 = post1.omega
    prior_part = (nb,) if nb else ()
    # prior latent block, rescaled by s1
    X_old = T.T / s1[:, None]
    Sig_old = prior.latent.Sigma / np.outer(s1, s1) if nb else np.zeros((0, 0))
    wd_old = post1.omega_delta

    if lik.cdf is None:
        posterior = post1
        X_post, Sigma_post, wd = X_old, Sig_old, wd_old
        log_s0 = np.zeros(0)
        partition = prior_part
    else:
        c = lik.cdf
        X0 = c.X
        OX = Omega1 @ X0.T
        S0 = symmetrize(X0 @ OX + c.Sigma)
        s0 = np.sqrt(np.diag(S0))
        G22 = S0 / np.outer(s0, s0)
        np.fill_diagonal(G22, 1.0)
        wd_new = OX / s0[None, :]
        gamma_new = (c.y + X0 @ xi1) / s0
        if nb:
            G21 = (X0 @ wd_old) / s0[:, None]
            Gamma = np.block([[post1.Gamma, G21.T], [G21, G22]])
            gamma = np.concatenate([post1.gamma, gamma_new])
        else:
            Gamma, gamma = G22, gamma_new
        wd = np.hstack([wd_old, wd_new])
        posterior = SunParams(xi1, Omega1, wd / omega1[:, None], gamma, Gamma, check=False)
        X_post = np.vstack([X_old, X0 / s0[:, None]])
        Sigma_post = linalg.block_diag(Sig_old, c.Sigma / np.outer(s0, s0))
        log_s0 = np.log(s0)
        partition = prior_part + tuple(lik.partition)

    if posterior.nbar:
        Lg, _ = chol(posterior.Gamma)
        A = chol_solve(Lg, wd.T).T
        V = symmetrize(Omega1 - A @ wd.T)
        eta = posterior.gamma - X_post @ xi1
    else:
        A = np.zeros((p, 0))
        V = Omega1
        eta = np.zeros(0)
        X_post = np.zeros((0, p))
        Sigma_post = np.zeros((0, 0))
    Sigma_post = symmetrize(Sigma_post)
    # seed the posterior's lazily computed latent form with the structured one
    posterior.__dict__["latent"] = LatentForm(X_post, eta, Sigma_post, A, V)
    return PosteriorBundle(posterior, partition, X_post, eta, Sigma_post, V, A, log_s0,
                           np.log(s1), prior, lik, float(log_ev))


def log_marginal_likelihood(prior, lik, accuracy=None, *, return_se=False):
    """log p(y) under the prior; with return_se also the standard error of the log estimate."""
    bundle = lik if isinstance(lik, PosteriorBundle) else update(prior, lik)
    lik = bundle.lik
    prior = bundle.prior
    num = mvn_cdf(bundle.posterior.gamma, bundle.posterior.Gamma, accuracy)
    den = mvn_cdf(prior.gamma, prior.Gamma, accuracy)
    val = lik.c_const + bundle.log_gauss_evidence + num.log_value - den.log_value
    if not return_se:
        return float(val)
    rel = 0.0
    for r in (num, den):
        if r.value > 0:
            rel += (r.std_error / r.value) ** 2
    return float(val), math.sqrt(rel)


def log_predictive(prior, lik_train, lik_new, accuracy=None, *, return_se=False):
    """log p(y_new | y) as a difference of two log marginal likelihoods."""
    if lik_new is None or (lik_new.n0 == 0 and lik_new.n1 == 0):
        return (0.0, 0.0) if return_se else 0.0
    joint = concat_likelihoods([lik_train, lik_new])
    a = log_marginal_likelihood(prior, joint, accuracy, return_se=True)
    b = log_marginal_likelihood(prior, lik_train, accuracy, return_se=True)
    val = a[0] - b[0]
    if return_se:
        return val, math.hypot(a[1], b[1])
    return val
