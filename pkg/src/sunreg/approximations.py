"""Deterministic posterior approximations: mean-field VB, partially factorized VB and EP.

Both variational schemes run entirely in the space of the latent utilities z.
With t = E[z] - gamma and the posterior's latent form (see ``LatentForm``):

* mean-field: q(beta) = N(xi + A t, V); every block q(z_c) is a normal
  truncated to z_c >= 0 with location gamma_c + [(I - Sigma Gamma^{-1}) t]_c
  and covariance Sigma_cc. Because Sigma is block diagonal all blocks are
  refreshed together.
* partially factorized: q(beta | z) is the exact conditional; the blocks
  q(z_c) are truncated normals with precision Q_cc (Q = Gamma^{-1}) and
  location gamma_c + t_c - Q_cc^{-1} (Q t)_c, updated one after the other.

Both ELBOs are reported up to the same additive constant, so the
unnormalized target has log-normalizer log Phi_N(gamma; Gamma) and
ELBO <= that value for both families.

EP keeps one Gaussian site per CDF block in the form
exp(-1/2 (X_c b)^T K_c (X_c b) + k_c^T X_c b) and works in the n_c-dimensional
projection u = X_c beta. The dense variant tracks the p x p covariance; the
scalable one tracks only B = X Omega (rows = latent coordinates), so one
sweep costs O(N^2 p) instead of O(N p^2).
"""

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._linalg import chol, chol_solve, logdet_from_chol, spd_inv, symmetrize
from .config import CONFIG
from .conjugate import PosteriorBundle, _gaussian_update
from .errors import CavityNotPD, MaxIterExceeded, MomentDimExceeded
from .mvn_kernel import LOG_2PI, TruncNormalSpec, mvn_cdf_shifted, tn1_moments, tn_moments


@dataclass
class VbState:
    method: str
    z_means: list
    z_covs: list
    beta_mean: np.ndarray
    beta_cov: np.ndarray
    elbo_trace: list
    converged: bool
    n_iter: int
    z_locs: list = field(default_factory=list)       # location of each truncated-normal factor
    z_scales: list = field(default_factory=list)     # and its pre-truncation covariance

    @property
    def elbo(self):
        return self.elbo_trace[-1] if self.elbo_trace else math.nan


@dataclass
class EpState:
    mean: np.ndarray
    cov: np.ndarray
    r_global: np.ndarray
    r_sites: list
    Q_factors: list             # K_c, so that Q_c = X_c^T K_c X_c
    k_sites: list
    log_z_sites: list
    log_evidence: float
    n_iter: int
    converged: bool
    n_skipped: int = 0
    damping: float = 1.0
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# truncated-normal factors


def _tn_block(loc, cov, chol_cov=None):
    """Mean, covariance, entropy of N(loc, cov) truncated to the positive orthant."""
    d = loc.shape[0]
    if d == 1:
        sd = math.sqrt(cov[0, 0])
        m, v, logp = tn1_moments(0.0, loc, sd)
        ent = float(logp[0] + 0.5 * (LOG_2PI + 2 * math.log(sd))
                    + 0.5 * (v[0] + (m[0] - loc[0]) ** 2) / cov[0, 0])
        return m, v.reshape(1, 1), ent
    if d > CONFIG.moment_dim_cap:
        raise MomentDimExceeded(f"block of size {d} exceeds the moment cap")
    spec = TruncNormalSpec(np.zeros(d), loc, cov)
    tm = tn_moments(spec)
    logp = mvn_cdf_shifted(np.zeros(d), -loc, cov).log_value
    L = chol(cov)[0] if chol_cov is None else chol_cov
    dev = tm.mean - loc
    quad = np.trace(chol_solve(L, tm.cov + np.outer(dev, dev)))
    ent = logp + 0.5 * (d * LOG_2PI + logdet_from_chol(L)) + 0.5 * quad
    return tm.mean, tm.cov, float(ent)


def _tn_singletons(loc, sd):
    """Vectorized version of _tn_block for 1 x 1 blocks."""
    m, v, logp = tn1_moments(0.0, loc, sd)
    ent = logp + 0.5 * LOG_2PI + np.log(sd) + 0.5 * (v + (m - loc) ** 2) / sd**2
    return m, v, ent


class _VbBase:
    def __init__(self, bundle):
        self.bundle = bundle
        post = bundle.posterior
        self.gamma = post.gamma
        self.N = post.nbar
        self.blocks = bundle.blocks()
        Lg, _ = chol(post.Gamma)
        self.Q = chol_solve(Lg, np.eye(self.N)) if self.N else np.zeros((0, 0))
        self.half_logdet_gamma = 0.5 * logdet_from_chol(Lg) if self.N else 0.0
        # start each coordinate at its own truncated mean, ignoring cross-dependence
        tn0 = _tn_singletons(self.gamma, np.ones(self.N))[0] if self.N else np.zeros(0)
        self.Ez = np.maximum(tn0, 0.1)
        self.loc = self.gamma.copy()
        self.t = self.Ez - self.gamma
        self.S = [np.zeros((sl.stop - sl.start,) * 2) for sl in self.blocks]
        self.H = np.zeros(len(self.blocks))
        self.singletons = all(sl.stop - sl.start == 1 for sl in self.blocks)

    def _base_elbo(self):
        return -0.5 * self.N * LOG_2PI - self.half_logdet_gamma

    def beta_mean(self):
        b = self.bundle
        return b.posterior.xi + b.A_post @ self.t


class _MeanField(_VbBase):
    def __init__(self, bundle):
        super().__init__(bundle)
        Sig = bundle.Sigma_post
        self.G = np.eye(self.N) - Sig @ self.Q
        self.sig_sd = np.sqrt(np.diag(Sig))
        self.sig_blocks = [Sig[sl, sl] for sl in self.blocks]
        self.sig_chol = [chol(s)[0] for s in self.sig_blocks]
        self.Sdiag = np.zeros(self.N)

    def sweep(self):
        loc = self.gamma + self.G @ self.t
        self.loc = loc
        if self.singletons:
            m, v, self.H = _tn_singletons(loc, self.sig_sd)
            self.Ez = m
            self.Sdiag = v
        else:
            for j, sl in enumerate(self.blocks):
                m, c, h = _tn_block(loc[sl], self.sig_blocks[j], self.sig_chol[j])
                self.Ez[sl] = m
                self.S[j] = c
                self.H[j] = h
        self.t = self.Ez - self.gamma
        return self.elbo()

    def elbo(self):
        quad = self.t @ self.Q @ self.t
        if self.singletons:
            tr = np.sum(self.Sdiag / self.sig_sd**2)
        else:
            tr = sum(np.trace(chol_solve(L, S)) for L, S in zip(self.sig_chol, self.S))
        return float(self._base_elbo() - 0.5 * quad - 0.5 * tr + np.sum(self.H))

    def state(self, trace, converged, n_iter):
        b = self.bundle
        if self.singletons:
            self.S = [np.array([[v]]) for v in self.Sdiag]
        return VbState("mf", [self.Ez[sl].copy() for sl in self.blocks], self.S,
                       self.beta_mean(), b.V_post.copy(), trace, converged, n_iter,
                       [self.loc[sl].copy() for sl in self.blocks], self.sig_blocks)


class _Pfm(_VbBase):
    def __init__(self, bundle):
        super().__init__(bundle)
        self.r = self.Q @ self.t
        self.qinv = [spd_inv(self.Q[sl, sl]) for sl in self.blocks]
        self.qinv_chol = [chol(c)[0] for c in self.qinv]
        if self.singletons:
            self.qdiag = np.diag(self.Q).copy()

    def sweep(self):
        if self.singletons:
            self._sweep_singletons()
        else:
            for j, sl in enumerate(self.blocks):
                loc = self.gamma[sl] + self.t[sl] - self.qinv[j] @ self.r[sl]
                self.loc[sl] = loc
                m, c, h = _tn_block(loc, self.qinv[j], self.qinv_chol[j])
                dt = (m - self.gamma[sl]) - self.t[sl]
                self.r += self.Q[:, sl] @ dt
                self.t[sl] += dt
                self.S[j] = c
                self.H[j] = h
        self.Ez = self.t + self.gamma
        return self.elbo()

    def _sweep_singletons(self):
        Q, r, t, g = self.Q, self.r, self.t, self.gamma
        for i in range(self.N):
            qii = self.qdiag[i]
            sd = 1.0 / math.sqrt(qii)
            loc = g[i] + t[i] - r[i] / qii
            self.loc[i] = loc
            m, v, h = _tn_singletons(np.array([loc]), np.array([sd]))
            dt = (m[0] - g[i]) - t[i]
            r += Q[:, i] * dt
            t[i] += dt
            self.S[i][0, 0] = v[0]
            self.H[i] = h[0]

    def elbo(self):
        quad = self.t @ self.r
        tr = sum(np.sum(self.Q[sl, sl] * S) for sl, S in zip(self.blocks, self.S))
        return float(self._base_elbo() - 0.5 * quad - 0.5 * tr + np.sum(self.H))

    def state(self, trace, converged, n_iter):
        b = self.bundle
        A = b.A_post
        Sz = linalg.block_diag(*self.S) if self.S else np.zeros((0, 0))
        cov = symmetrize(b.V_post + A @ Sz @ A.T)
        return VbState("pfm", [self.Ez[sl].copy() for sl in self.blocks], self.S,
                       self.beta_mean(), cov, trace, converged, n_iter,
                       [self.loc[sl].copy() for sl in self.blocks], self.qinv)


def _run_vb(engine, tol, max_iter):
    if engine.N == 0:
        return engine.state([0.0], True, 1)
    trace = []
    prev = -math.inf
    for it in range(1, max_iter + 1):
        val = engine.sweep()
        trace.append(val)
        if abs(val - prev) < tol:
            return engine.state(trace, True, it)
        prev = val
    warnings.warn(f"{engine.__class__.__name__.strip('_')} stopped after {max_iter} iterations",
                  MaxIterExceeded, stacklevel=3)
    return engine.state(trace, False, max_iter)


def mf_vb(bundle, tol=1e-6, max_iter=1000):
    """Mean-field variational Bayes over (beta, z_1, ..., z_C)."""
    return _run_vb(_MeanField(bundle), tol, max_iter)


def pfm_vb(bundle, tol=1e-6, max_iter=1000):
    """Partially factorized variational Bayes: q(beta | z) exact, q(z) = prod_c q(z_c)."""
    return _run_vb(_Pfm(bundle), tol, max_iter)


# ---------------------------------------------------------------------------
# expectation propagation


def _sites_from(prior, lik):
    """CDF factors Phi(y_c + X_c beta; S_c) seen by EP, with a skewed prior folded in first."""
    ys, Xs, Ss, sizes = [], [], [], []
    if prior.nbar:
        lat = prior.latent
        ys.append(lat.eta)
        Xs.append(lat.X)
        Ss.append(lat.Sigma)
        sizes.append(prior.nbar)
    if lik.cdf is not None:
        c = lik.cdf
        for sl in lik.blocks():
            ys.append(c.y[sl])
            Xs.append(c.X[sl])
            Ss.append(c.Sigma[sl, sl])
            sizes.append(sl.stop - sl.start)
    return ys, Xs, Ss, sizes


def _hybrid(g, M):
    """log-normalizer and moments of N(g, M) truncated to the positive orthant."""
    d = g.shape[0]
    if d == 1:
        m, v, logp = tn1_moments(0.0, g, math.sqrt(M[0, 0]))
        return float(logp[0]), m, v.reshape(1, 1)
    tm = tn_moments(TruncNormalSpec(np.zeros(d), g, M))
    logz = mvn_cdf_shifted(np.zeros(d), -g, M).log_value
    return logz, tm.mean, tm.cov


class _Ep:
    """Shared EP machinery; subclasses say how the global covariance is stored."""

    def __init__(self, prior, lik, damping=1.0, order=None):
        self.prior, self.lik = prior, lik
        self.p = prior.p
        if lik.gauss is not None:
            g = lik.gauss
            self.xi1, self.Omega1, self.log_gauss_ev = _gaussian_update(
                prior.xi, prior.Omega, g.y, g.X, g.Sigma)
        else:
            self.xi1, self.Omega1, self.log_gauss_ev = prior.xi, prior.Omega, 0.0
        self.ys, self.Xs, self.Ss, sizes = _sites_from(prior, lik)
        self.C = len(sizes)
        if any(k > CONFIG.moment_dim_cap for k in sizes):
            raise MomentDimExceeded("an EP site exceeds the moment cap")
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.Xall = np.vstack(self.Xs) if self.C else np.zeros((0, self.p))
        self.K = [np.zeros((k, k)) for k in sizes]
        self.k = [np.zeros(k) for k in sizes]
        self.logz = [0.0] * self.C
        self.damping = damping
        self.order = list(range(self.C)) if order is None else list(order)
        self.mu = self.xi1.copy()
        self.n_skipped = 0
        self.fallback_engaged = False

    # hooks: covariance action restricted to a site
    def _omega_xt(self, c):
        raise NotImplementedError

    def _apply_update(self, c, OXt, D, inner):
        raise NotImplementedError

    def _site_update(self, c):
        X = self.Xs[c]
        nc = X.shape[0]
        OXt = self._omega_xt(c)                  # Omega X_c^T, p x n_c
        S = symmetrize(X @ OXt)
        m = X @ self.mu
        Kc, kc = self.K[c], self.k[c]
        eye = np.eye(nc)
        try:
            T = symmetrize(S @ np.linalg.inv(eye - Kc @ S))
            # the cavity may be singular (n_c > p) but must stay semi-definite
            ev = np.linalg.eigvalsh(T)
            if ev[0] < -1e-10 * max(ev[-1], 1.0):
                return None
            g_lat = m + T @ (Kc @ m - kc)
            g = self.ys[c] + g_lat
            M = symmetrize(T + self.Ss[c])
            Lm, _ = chol(M, jitter_max=0.0)
        except (np.linalg.LinAlgError, ValueError):
            return None
        logz, mt, Vt = _hybrid(g, M)
        Minv = chol_solve(Lm, eye)
        e = mt - g
        G = symmetrize(Minv @ (M - Vt) @ Minv)
        K_new = symmetrize(G @ np.linalg.inv(eye - T @ G))
        Me = Minv @ e
        k_new = Me + K_new @ (g_lat + T @ Me)
        delta = self.damping
        D = delta * (K_new - Kc)
        dk = delta * (k_new - kc)
        inner = np.linalg.solve(eye + S @ D, eye)          # (I + S D)^{-1}
        step = np.linalg.solve(eye + D @ S, dk) - D @ (inner @ m)
        self.mu = self.mu + OXt @ step
        self._apply_update(c, OXt, D, inner)
        change = max(np.max(np.abs(D)), np.max(np.abs(dk)))
        self.K[c] = Kc + D
        self.k[c] = kc + dk
        self.logz[c] = logz
        return change

    def sweep(self):
        change = 0.0
        skipped = 0
        for c in self.order:
            res = self._site_update(c)
            if res is None:
                skipped += 1
                continue
            change = max(change, res)
        self.n_skipped += skipped
        if skipped and self.C:
            if skipped == self.C:
                raise CavityNotPD("every site produced an invalid cavity in one sweep")
            if not self.fallback_engaged:
                self.damping = min(self.damping, 0.5)
                self.fallback_engaged = True
            change = math.inf
        return change

    # evidence and final state

    def _S_all(self):
        raise NotImplementedError

    def _final_cov(self):
        raise NotImplementedError

    def _log_z(self):
        """log of the EP approximation to int N(beta; xi1, Omega1) prod_c Phi(y_c + X_c beta; S_c)."""
        if self.C == 0:
            return 0.0
        Kall = linalg.block_diag(*self.K)
        kall = np.concatenate(self.k)
        S_all = self._S_all()
        N = S_all.shape[0]
        eye = np.eye(N)
        W = Kall @ np.linalg.inv(eye + S_all @ Kall)
        xx = self.Xall @ self.xi1
        v = xx + S_all @ kall
        quad = 2 * kall @ xx + kall @ S_all @ kall - v @ W @ v
        ld = np.linalg.slogdet(eye + Kall @ S_all)[1]
        total = 0.5 * quad - 0.5 * ld
        for c in range(self.C):
            X = self.Xs[c]
            nc = X.shape[0]
            OXt = self._omega_xt(c)
            S = symmetrize(X @ OXt)
            m = X @ self.mu
            Kc, kc = self.K[c], self.k[c]
            I = np.eye(nc)
            T = symmetrize(S @ np.linalg.inv(I - Kc @ S))
            g = self.ys[c] + m + T @ (Kc @ m - kc)
            logz, _, _ = _hybrid(g, symmetrize(T + self.Ss[c]))
            Wc = Kc @ np.linalg.inv(I - S @ Kc)
            dv = m - S @ kc
            dq = -2 * kc @ m + kc @ S @ kc + dv @ Wc @ dv
            dld = np.linalg.slogdet(I - Kc @ S)[1]
            self.logz[c] = logz
            total += logz + 0.5 * dq - 0.5 * dld
        return float(total)

    def r0(self):
        L, _ = chol(self.prior.Omega)
        r = chol_solve(L, self.prior.xi)
        g = self.lik.gauss
        if g is not None:
            r = r + g.X.T @ chol_solve(chol(g.Sigma)[0], g.y)
        return r

    def state(self, n_iter, converged):
        logz = self._log_z()
        log_ev = (self.lik.c_const + self.log_gauss_ev + logz
                  - (self.prior.log_norm_const if self.prior.nbar else 0.0))
        r_sites = [X.T @ k for X, k in zip(self.Xs, self.k)]
        r_glob = self.r0() + (sum(r_sites) if r_sites else 0.0)
        return EpState(self.mu.copy(), self._final_cov(), r_glob, r_sites, list(self.K),
                       list(self.k), list(self.logz), log_ev, n_iter, converged,
                       self.n_skipped, self.damping)


class _EpDense(_Ep):
    def __init__(self, prior, lik, damping=1.0, order=None):
        super().__init__(prior, lik, damping, order)
        self.Omega = self.Omega1.copy()

    def _omega_xt(self, c):
        return self.Omega @ self.Xs[c].T

    def _apply_update(self, c, OXt, D, inner):
        self.Omega = symmetrize(self.Omega - OXt @ (D @ inner) @ OXt.T)

    def _S_all(self):
        return symmetrize(self.Xall @ self.Omega1 @ self.Xall.T)

    def _final_cov(self):
        return self.Omega.copy()


class _EpScalable(_Ep):
    def __init__(self, prior, lik, damping=1.0, order=None):
        super().__init__(prior, lik, damping, order)
        self.B = self.Xall @ self.Omega1          # N x p, equals X Omega_EP throughout
        self.S0 = symmetrize(self.B @ self.Xall.T)

    def _omega_xt(self, c):
        return self.B[self.offsets[c]:self.offsets[c + 1]].T

    def _apply_update(self, c, OXt, D, inner):
        BXt = self.B @ self.Xs[c].T                # X Omega X_c^T, N x n_c
        self.B = self.B - BXt @ (D @ inner) @ OXt.T

    def _S_all(self):
        return self.S0

    def _final_cov(self):
        if self.C == 0:
            return self.Omega1.copy()
        Kall = linalg.block_diag(*self.K)
        W = Kall @ np.linalg.inv(np.eye(Kall.shape[0]) + self.S0 @ Kall)
        B0 = self.Xall @ self.Omega1
        return symmetrize(self.Omega1 - B0.T @ W @ B0)


def _run_ep(engine, tol, max_iter):
    if engine.C == 0:
        return engine.state(1, True)
    for it in range(1, max_iter + 1):
        change = engine.sweep()
        if change < tol:
            return engine.state(it, True)
    warnings.warn(f"EP stopped after {max_iter} sweeps", MaxIterExceeded, stacklevel=3)
    return engine.state(max_iter, False)


def _unpack(prior, lik):
    if isinstance(prior, PosteriorBundle):
        return prior.prior, prior.lik
    if lik is None:
        raise ValueError("pass either a PosteriorBundle or (prior, lik)")
    return prior, lik


def ep(prior, lik=None, tol=1e-6, max_iter=100, damping=1.0, order=None):
    """Expectation propagation storing the full p x p covariance."""
    prior, lik = _unpack(prior, lik)
    return _run_ep(_EpDense(prior, lik, damping, order), tol, max_iter)


def ep_scalable(prior, lik=None, tol=1e-6, max_iter=100, damping=1.0, order=None):
    """Expectation propagation tracking only X Omega_EP; same fixed point as ``ep``."""
    prior, lik = _unpack(prior, lik)
    return _run_ep(_EpScalable(prior, lik, damping, order), tol, max_iter)


def time_sweeps(method, bundle, n_sweeps=3):
    """Median wall time of one sweep after a warm-up sweep (used by the scaling benchmark)."""
    factories = {
        "mf": lambda: _MeanField(bundle),
        "pfm": lambda: _Pfm(bundle),
        "ep": lambda: _EpScalable(bundle.prior, bundle.lik),
        "ep_dense": lambda: _EpDense(bundle.prior, bundle.lik),
    }
    engine = factories[method]()
    engine.sweep()
    times = []
    for _ in range(n_sweeps):
        t0 = time.perf_counter()
        engine.sweep()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))
