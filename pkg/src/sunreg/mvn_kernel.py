"""Multivariate Gaussian orthant probabilities, truncated normal sampling and moments.

Three primitives sit underneath everything else in the package:

* ``mvn_cdf``: P(Z <= upper) for Z ~ N(0, R) with R a correlation matrix.
  Dimension one uses ``log_ndtr``. Dimensions two and three integrate the
  separation-of-variables representation with adaptive Gauss-Kronrod
  quadrature, so they are deterministic. Higher dimensions use
  randomized quasi-Monte Carlo over the same representation, after greedy
  variable reordering. Everything is accumulated in log scale.
* ``sample_tmvn``: exact draws from a lower-truncated Gaussian by
  accept-reject with a minimax exponentially tilted proposal.
* ``tn_moments``: mean and covariance of a lower-truncated Gaussian from
  the derivative identities of its normalizing constant.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.special import erfc, log_ndtr, logsumexp, ndtr, ndtri_exp
from scipy.stats import qmc

from ._linalg import as_rng, chol, spd_inv, symmetrize
from .config import CONFIG
from .errors import DimensionMismatch, MomentDimExceeded, RegionTooImprobable

LOG_2PI = math.log(2 * math.pi)
_TINY = 1e-300


@dataclass(frozen=True)
class McdfResult:
    value: float
    log_value: float
    std_error: float
    n_samples: int


@dataclass(frozen=True)
class TruncNormalSpec:
    """N(mean, cov) restricted to {x : x >= lower}; lower may contain -inf."""

    lower: np.ndarray
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        d = mean.shape[0]
        if lower.shape != (d,) or cov.shape != (d, d):
            raise DimensionMismatch(
                f"lower {lower.shape}, mean {mean.shape}, cov {cov.shape} disagree")
        scale = max(np.max(np.abs(cov)), _TINY)
        if np.max(np.abs(cov - cov.T)) > 1e-10 * scale:
            raise ValueError("cov is not symmetric")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", symmetrize(cov))

    @property
    def dim(self):
        return self.mean.shape[0]


@dataclass(frozen=True)
class TnMoments:
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class TmvnDraws:
    draws: np.ndarray
    method: str                   # "tilting" or "gibbs-fallback"
    acceptance: float
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# univariate helpers


def log_norm_pdf(x):
    return -0.5 * np.square(x) - 0.5 * LOG_2PI


def ln_normal_prob(a, b):
    """log P(a < Z < b) for Z ~ N(0, 1), elementwise and accurate in both tails."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    out = np.empty(a.shape)
    upper = a > 0
    if np.any(upper):
        pa = log_ndtr(-a[upper])
        pb = log_ndtr(-b[upper])
        out[upper] = pa + np.log1p(-np.exp(pb - pa))
    lower = b < 0
    if np.any(lower):
        pa = log_ndtr(a[lower])
        pb = log_ndtr(b[lower])
        out[lower] = pb + np.log1p(-np.exp(pa - pb))
    mid = ~(upper | lower)
    if np.any(mid):
        pa = erfc(-a[mid] / math.sqrt(2)) / 2
        pb = erfc(b[mid] / math.sqrt(2)) / 2
        out[mid] = np.log1p(-pa - pb)
    return out


def tn1_moments(lower, mean, sd):
    """Mean, variance and log-mass of N(mean, sd^2) truncated to x >= lower.

    Vectorized; uses the inverse Mills ratio through log-probabilities so it
    stays accurate far into the upper tail.
    """
    lower, mean, sd = np.broadcast_arrays(
        np.asarray(lower, dtype=float), np.asarray(mean, dtype=float),
        np.asarray(sd, dtype=float))
    t = (lower - mean) / sd
    logp = log_ndtr(-t)
    lam = np.where(np.isfinite(t), np.exp(log_norm_pdf(t) - logp), 0.0)
    tlam = np.where(np.isfinite(t), t * lam, 0.0)
    m = mean + sd * lam
    v = sd**2 * np.maximum(1.0 + tlam - lam**2, 0.0)
    return m, v, logp


def _ntail(lo, hi, rng):
    # Rayleigh proposal for Z in [lo, hi] with lo > 0
    c = lo**2 / 2
    f = np.expm1(c - hi**2 / 2)
    n = lo.shape[0]
    x = c - np.log1p(rng.random(n) * f)
    bad = np.nonzero(rng.random(n) ** 2 * x > c)[0]
    while bad.size:
        cy = c[bad]
        y = cy - np.log1p(rng.random(bad.size) * f[bad])
        ok = rng.random(bad.size) ** 2 * y < cy
        x[bad[ok]] = y[ok]
        bad = bad[~ok]
    return np.sqrt(2 * x)


def _trnd(lo, hi, rng):
    x = rng.standard_normal(lo.shape[0])
    bad = np.nonzero((x < lo) | (x > hi))[0]
    while bad.size:
        y = rng.standard_normal(bad.size)
        ok = (y > lo[bad]) & (y < hi[bad])
        x[bad[ok]] = y[ok]
        bad = bad[~ok]
    return x


def _tn(lo, hi, rng, tol=2.0):
    x = np.empty(lo.shape[0])
    wide = np.abs(hi - lo) > tol
    if np.any(wide):
        x[wide] = _trnd(lo[wide], hi[wide], rng)
    narrow = ~wide
    if np.any(narrow):
        pl = erfc(lo[narrow] / math.sqrt(2)) / 2
        pu = erfc(hi[narrow] / math.sqrt(2)) / 2
        u = rng.random(int(narrow.sum()))
        from scipy.special import erfcinv
        x[narrow] = math.sqrt(2) * erfcinv(2 * (pl - (pl - pu) * u))
    return x


def trandn(lo, hi, rng):
    """Standard normal draws truncated to [lo, hi], elementwise."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float)).copy()
    hi = np.atleast_1d(np.asarray(hi, dtype=float)).copy()
    lo, hi = np.broadcast_arrays(lo, hi)
    x = np.empty(lo.shape[0])
    a = 0.66
    right = lo > a
    if np.any(right):
        x[right] = _ntail(lo[right], hi[right], rng)
    left = hi < -a
    if np.any(left):
        x[left] = -_ntail(-hi[left], -lo[left], rng)
    mid = ~(right | left)
    if np.any(mid):
        x[mid] = _tn(lo[mid], hi[mid], rng)
    return x


# ---------------------------------------------------------------------------
# orthant probabilities


def _bvn_log(h, k, rho):
    """log P(Z1 <= h, Z2 <= k), unit variances and correlation rho."""
    if h > k:
        h, k = k, h
    if rho == 0.0:
        return float(log_ndtr(h) + log_ndtr(k)), 0.0, 1
    s2 = 1.0 - rho * rho
    if s2 <= 1e-15:
        if rho > 0:
            return float(log_ndtr(h)), 0.0, 1
        if h <= -k:
            return -math.inf, 0.0, 1
        return float(ln_normal_prob(np.array([-k]), np.array([h]))[0]), 0.0, 1
    s = math.sqrt(s2)
    l1 = float(log_ndtr(h))
    if l1 == -math.inf:
        return -math.inf, 0.0, 1

    # P = Phi(h) * int_0^1 Phi((k - rho*y(w)) / s) dw,  y(w) = Phi^{-1}(w Phi(h))
    def f(w):
        y = ndtri_exp(math.log(w) + l1)
        return ndtr((k - rho * y) / s)

    val, err, info = integrate.quad(f, 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=200,
                                    full_output=True)[:3]
    if val <= 0:
        return -math.inf, 0.0, info["neval"]
    return l1 + math.log(val), err * math.exp(l1), info["neval"]


def _phi2(x, y, rho):
    s2 = 1.0 - rho * rho
    return math.exp(-(x * x - 2 * rho * x * y + y * y) / (2 * s2)) / (2 * math.pi * math.sqrt(s2))


def _cond1(b_a, b_b, r_ab, c_a, c_b):
    """Conditional mean and sd of a third unit-variance coordinate given two others."""
    det = 1.0 - r_ab * r_ab
    wa = (c_a - r_ab * c_b) / det
    wb = (c_b - r_ab * c_a) / det
    mu = wa * b_a + wb * b_b
    var = 1.0 - (wa * c_a + wb * c_b)
    return mu, math.sqrt(max(var, 1e-300))


def _tvn_log(b, R):
    """Trivariate orthant via integration along a correlation path.

    The pair with the largest |correlation| is kept fixed; the other two
    correlations are scaled by t in [0, 1] and the derivative of the CDF with
    respect to each correlation is the bivariate density times a conditional
    univariate CDF.
    """
    pairs = [(0, 1), (0, 2), (1, 2)]
    j, k = max(pairs, key=lambda pq: abs(R[pq]))
    i = 3 - j - k
    b1, b2, b3 = float(b[i]), float(b[j]), float(b[k])
    r12, r13, r23 = float(R[i, j]), float(R[i, k]), float(R[j, k])
    lbase, err_b, nev = _bvn_log(b2, b3, r23)
    lbase += float(log_ndtr(b1))
    if r12 == 0.0 and r13 == 0.0:
        return lbase, err_b, nev
    base = math.exp(lbase) if lbase > -700 else 0.0

    def f(t):
        a12, a13 = t * r12, t * r13
        out = 0.0
        if r12 != 0.0:
            mu, sd = _cond1(b1, b2, a12, a13, r23)
            out += r12 * _phi2(b1, b2, a12) * ndtr((b3 - mu) / sd)
        if r13 != 0.0:
            mu, sd = _cond1(b1, b3, a13, a12, r23)
            out += r13 * _phi2(b1, b3, a13) * ndtr((b2 - mu) / sd)
        return out

    incr, err, info = integrate.quad(f, 0.0, 1.0, epsabs=1e-15 * max(base, 1e-300),
                                     epsrel=1e-12, limit=200, full_output=True)[:3]
    total = base + incr
    if base > 0 and total > 1e-6 * base:
        return math.log(total), err + err_b, nev + info["neval"]
    return _tvn_sov_log(b, R)


def _tvn_sov_log(b, R):
    # nested separation of variables: outer coordinate is the most restrictive one
    i = int(np.argmin(b))
    rest = [q for q in range(3) if q != i]
    l1 = float(log_ndtr(b[i]))
    if l1 == -math.inf:
        return -math.inf, 0.0, 1
    c = R[rest, i]
    C = R[np.ix_(rest, rest)] - np.outer(c, c)
    sd = np.sqrt(np.maximum(np.diag(C), 1e-300))
    rho = float(C[0, 1] / (sd[0] * sd[1]))
    count = [0]

    def f(w):
        y = ndtri_exp(math.log(w) + l1)
        lv, _, nev = _bvn_log((b[rest[0]] - c[0] * y) / sd[0], (b[rest[1]] - c[1] * y) / sd[1], rho)
        count[0] += nev
        return math.exp(lv)

    val, err = integrate.quad(f, 0.0, 1.0, epsabs=0.0, epsrel=1e-10, limit=200)
    if val <= 0:
        return -math.inf, 0.0, count[0]
    return l1 + math.log(val), err * math.exp(l1), count[0]


def _reorder_chol(b, R):
    """Greedy most-restrictive-first ordering with the matching Cholesky factor."""
    d = b.shape[0]
    b = b.copy()
    S = R.copy()
    L = np.zeros((d, d))
    y = np.zeros(d)
    perm = np.arange(d)
    for i in range(d):
        var = np.diag(S)[i:] - np.sum(L[i:, :i] ** 2, axis=1)
        sd = np.sqrt(np.maximum(var, 1e-300))
        t = (b[i:] - L[i:, :i] @ y[:i]) / sd
        j = i + int(np.argmin(log_ndtr(t)))
        if j != i:
            b[[i, j]] = b[[j, i]]
            perm[[i, j]] = perm[[j, i]]
            S[[i, j], :] = S[[j, i], :]
            S[:, [i, j]] = S[:, [j, i]]
            L[[i, j], :] = L[[j, i], :]
        L[i, i] = sd[j - i]
        L[i + 1:, i] = (S[i + 1:, i] - L[i + 1:, :i] @ L[i, :i]) / L[i, i]
        ti = t[j - i]
        y[i] = -math.exp(log_norm_pdf(ti) - log_ndtr(ti))
    return b, L, perm


def _sov_log_mean(b, L, w):
    n, d = w.shape[0], b.shape[0]
    y = np.zeros((n, d - 1))
    logp = np.zeros(n)
    logw = np.log(np.clip(w, 1e-300, 1.0))
    for i in range(d):
        t = (b[i] - y[:, :i] @ L[i, :i]) / L[i, i]
        le = log_ndtr(t)
        logp += le
        if i < d - 1:
            yi = ndtri_exp(logw[:, i] + le)
            y[:, i] = np.where(np.isfinite(yi), yi, 0.0)
    return logsumexp(logp) - math.log(n)


def _sov_qmc(b, R, accuracy, rel_accuracy, max_points, n_shifts, min_points, seed):
    b, L, _ = _reorder_chol(b, R)
    d = b.shape[0]
    rng = np.random.default_rng(seed)
    shifts = rng.random((n_shifts, d - 1))
    m = max(int(math.log2(min_points)), 1)
    while True:
        base = qmc.Sobol(d - 1, scramble=True, seed=seed).random_base2(m)
        est = np.array([_sov_log_mean(b, L, (base + s) % 1.0) for s in shifts])
        total = base.shape[0] * n_shifts
        lv = logsumexp(est) - math.log(n_shifts)
        if lv == -math.inf:
            return lv, 0.0, total
        rel_se = float(np.std(np.exp(est - lv), ddof=1) / math.sqrt(n_shifts))
        se = math.exp(lv) * rel_se
        done = se <= accuracy and (rel_accuracy is None or rel_se <= rel_accuracy)
        if done or 2 * total > max_points:
            return lv, se, total
        m += 1


def mvn_cdf(upper, corr, accuracy=None, *, rel_accuracy=None, max_points=None, seed=None,
            method="auto"):
    """P(Z <= upper) for Z ~ N(0, corr), corr a correlation matrix.

    ``accuracy`` is the target absolute standard error of the QMC estimate;
    ``rel_accuracy`` optionally also bounds std_error/value. Upper limits
    beyond ``CONFIG.clamp_upper`` are treated as +inf. ``method`` may be
    "qmc" to force the randomized estimator in any dimension.
    """
    accuracy = CONFIG.accuracy if accuracy is None else accuracy
    max_points = CONFIG.max_points if max_points is None else max_points
    seed = CONFIG.qmc_seed if seed is None else seed
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    corr = np.atleast_2d(np.asarray(corr, dtype=float))
    d = upper.shape[0]
    if corr.shape != (d, d):
        raise DimensionMismatch(f"upper has {d} entries but corr is {corr.shape}")
    if d == 0:
        return McdfResult(1.0, 0.0, 0.0, 0)
    if np.any(np.abs(np.diag(corr) - 1.0) > 1e-8):
        raise ValueError("corr must have unit diagonal")
    if np.any(np.isnan(upper)):
        raise ValueError("upper contains NaN")
    if np.any(upper == -np.inf):
        return McdfResult(0.0, -math.inf, 0.0, 0)
    keep = upper <= CONFIG.clamp_upper
    if not np.any(keep):
        return McdfResult(1.0, 0.0, 0.0, 0)
    b = upper[keep]
    R = symmetrize(corr[np.ix_(keep, keep)])
    d = b.shape[0]
    _, jit = chol(R)
    if jit > 0:
        R = (R + jit * np.eye(d)) / (1 + jit)
        b = b / math.sqrt(1 + jit)

    if d == 1:
        lv, se, ns = float(log_ndtr(b[0])), 0.0, 1
    elif d <= CONFIG.exact_cdf_dim and method != "qmc":
        if d == 2:
            lv, se, ns = _bvn_log(b[0], b[1], float(R[0, 1]))
        else:
            lv, se, ns = _tvn_log(b, R)
    else:
        lv, se, ns = _sov_qmc(b, R, accuracy, rel_accuracy, max_points, CONFIG.n_shifts,
                              CONFIG.min_points, seed)
    value = math.exp(lv) if lv > -745 else 0.0
    return McdfResult(min(value, 1.0), min(lv, 0.0), float(se), int(ns))


def mvn_cdf_shifted(upper, mean, cov, accuracy=None, **kw):
    """P(X <= upper) for X ~ N(mean, cov), by standardizing to correlation form."""
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = upper.shape[0]
    if mean.shape != (d,) or cov.shape != (d, d):
        raise DimensionMismatch("upper, mean and cov disagree")
    if d == 0:
        return McdfResult(1.0, 0.0, 0.0, 0)
    sd = np.sqrt(np.diag(cov))
    if np.any(~(sd > 0)):
        raise ValueError("cov has non-positive diagonal")
    corr = cov / np.outer(sd, sd)
    np.fill_diagonal(corr, 1.0)
    return mvn_cdf((upper - mean) / sd, corr, accuracy, **kw)


# ---------------------------------------------------------------------------
# minimax exponential tilting


def _colperm(S, lo, hi):
    d = S.shape[0]
    S = S.copy()
    lo = lo.copy()
    hi = hi.copy()
    L = np.zeros((d, d))
    z = np.zeros(d)
    perm = np.arange(d)
    for j in range(d):
        pr = np.full(d, np.inf)
        idx = np.arange(j, d)
        s = np.diag(S)[idx] - np.sum(L[idx, :j] ** 2, axis=1)
        s = np.sqrt(np.maximum(s, 1e-300))
        cm = L[idx, :j] @ z[:j]
        pr[idx] = ln_normal_prob((lo[idx] - cm) / s, (hi[idx] - cm) / s)
        k = int(np.argmin(pr))
        jk, kj = [j, k], [k, j]
        S[jk, :] = S[kj, :]
        S[:, jk] = S[:, kj]
        L[jk, :] = L[kj, :]
        lo[jk] = lo[kj]
        hi[jk] = hi[kj]
        perm[jk] = perm[kj]
        s = S[j, j] - L[j, :j] @ L[j, :j]
        if s < -0.01 * S[j, j]:
            raise np.linalg.LinAlgError("covariance is not positive semi-definite")
        L[j, j] = math.sqrt(max(s, 1e-300))
        L[j + 1:, j] = (S[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
        cm = L[j, :j] @ z[:j]
        tl = np.array([(lo[j] - cm) / L[j, j]])
        tu = np.array([(hi[j] - cm) / L[j, j]])
        w = ln_normal_prob(tl, tu)
        z[j] = float((np.exp(-0.5 * tl**2 - w) - np.exp(-0.5 * tu**2 - w))[0]) / math.sqrt(2 * math.pi)
    return L, perm, lo, hi


def _gradpsi(y, L, lo, hi):
    d = lo.shape[0]
    c = np.zeros(d)
    x = np.zeros(d)
    mu = np.zeros(d)
    x[:d - 1] = y[:d - 1]
    mu[:d - 1] = y[d - 1:]
    c[1:] = L[1:, :] @ x
    lt = lo - mu - c
    ut = hi - mu - c
    w = ln_normal_prob(lt, ut)
    pl = np.exp(-0.5 * lt**2 - w) / math.sqrt(2 * math.pi)
    pu = np.exp(-0.5 * ut**2 - w) / math.sqrt(2 * math.pi)
    P = pl - pu
    dfdx = -mu[:d - 1] + (P @ L[:, :d - 1])
    dfdm = mu - x + P
    grad = np.concatenate([dfdx, dfdm[:-1]])
    lt[np.isinf(lt)] = 0.0
    ut[np.isinf(ut)] = 0.0
    dP = -P**2 + lt * pl - ut * pu
    DL = dP[:, None] * L
    mx = (DL - np.eye(d))[:-1, :-1]
    xx = (L.T @ DL)[:-1, :-1]
    J = np.block([[xx, mx.T], [mx, np.diag(1 + dP[:-1])]])
    return grad, J


def _psy(x, L, lo, hi, mu):
    x = np.append(x, 0.0)
    mu = np.append(mu, 0.0)
    c = L @ x
    lt = lo - mu - c
    ut = hi - mu - c
    return float(np.sum(ln_normal_prob(lt, ut) + 0.5 * mu**2 - x * mu))


class _Tilting:
    """Proposal and bound of the minimax tilting sampler for N(0, S) on [lo, hi]."""

    def __init__(self, S, lo, hi):
        d = S.shape[0]
        self.d = d
        Lfull, self.perm, lo, hi = _colperm(S, lo, hi)
        D = np.diag(Lfull).copy()
        self.Lfull = Lfull
        self.L = Lfull / D[:, None] - np.eye(d)
        self.lo = lo / D
        self.hi = hi / D
        if d > 1:
            sol = optimize.root(_gradpsi, np.zeros(2 * (d - 1)), args=(self.L, self.lo, self.hi),
                                method="hybr", jac=True)
            x = sol.x[:d - 1]
            self.mu = sol.x[d - 1:]
            self.solved = bool(sol.success)
        else:
            x = np.zeros(0)
            self.mu = np.zeros(0)
            self.solved = True
        self.psistar = _psy(x, self.L, self.lo, self.hi, self.mu)

    def propose(self, n, rng):
        d = self.d
        mu = np.append(self.mu, 0.0)
        Z = np.zeros((d, n))
        logpr = np.zeros(n)
        for k in range(d):
            col = self.L[k, :k] @ Z[:k, :]
            tl = self.lo[k] - mu[k] - col
            tu = self.hi[k] - mu[k] - col
            Z[k, :] = mu[k] + trandn(tl, tu, rng)
            logpr += ln_normal_prob(tl, tu) + 0.5 * mu[k] ** 2 - mu[k] * Z[k, :]
        return logpr, Z

    def to_original(self, Z):
        Y = self.Lfull @ Z
        out = np.empty_like(Y)
        out[self.perm, :] = Y
        return out.T


def _gibbs_tmvn(S, lo, start, n, rng, burn_in, thin):
    """Coordinate-wise Gibbs on N(0, S) restricted to x >= lo, many chains in parallel."""
    d = S.shape[0]
    per_chain = min(n, 20)
    n_chains = -(-n // per_chain)
    Y = start[:n_chains].T.copy()           # d x chains
    P = spd_inv(S)
    cond_sd = 1.0 / np.sqrt(np.diag(P))
    out = []
    n_sweeps = burn_in + per_chain * thin
    for sweep in range(n_sweeps):
        for i in range(d):
            m = -(P[i] @ Y - P[i, i] * Y[i]) / P[i, i]
            Y[i] = m + cond_sd[i] * trandn((lo[i] - m) / cond_sd[i],
                                           np.full(n_chains, np.inf), rng)
        if sweep >= burn_in and (sweep - burn_in + 1) % thin == 0:
            out.append(Y.T.copy())
    draws = np.concatenate(out, axis=0)
    return draws[:n]


def sample_tmvn(spec, n, rng=None, *, allow_fallback=True, accept_floor=None,
                return_info=False):
    """Draw n vectors from N(mean, cov) restricted to x >= lower.

    Exact accept-reject with a minimax tilted proposal. If the empirical
    acceptance rate drops below ``accept_floor`` the sampler switches to
    parallel coordinate-wise Gibbs chains (burn-in and thinning from CONFIG),
    which is flagged by ``method="gibbs-fallback"`` in the returned info.
    """
    rng = as_rng(rng)
    accept_floor = CONFIG.accept_floor if accept_floor is None else accept_floor
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    d = spec.dim
    lo = spec.lower - spec.mean
    S = spec.cov
    L0, jit = chol(S)
    if jit > 0:
        S = S + jit * np.eye(d)

    if d == 1:
        sd = math.sqrt(S[0, 0])
        x = spec.mean[0] + sd * trandn(np.full(n, lo[0] / sd), np.full(n, np.inf), rng)
        res = TmvnDraws(x[:, None], "tilting", 1.0)
        return res if return_info else res.draws

    tilt = _Tilting(S, lo, np.full(d, np.inf))
    if not np.isfinite(tilt.psistar):
        raise RegionTooImprobable("truncation region has zero probability")
    chunks = []
    n_acc = 0
    n_prop = 0
    batch = max(n, 64)
    cap = max(1000, int(4e6 / d))
    while n_acc < n:
        batch = min(batch, cap)
        logpr, Z = tilt.propose(batch, rng)
        keep = np.log(rng.random(batch)) < logpr - tilt.psistar
        n_prop += batch
        n_acc += int(keep.sum())
        chunks.append(Z[:, keep])
        rate = n_acc / n_prop
        if n_prop >= 2000 and rate < accept_floor:
            if not allow_fallback:
                raise RegionTooImprobable(
                    f"tilting acceptance {rate:.2e} below floor {accept_floor:.1e}")
            start = tilt.to_original(Z[:, : min(batch, n)])
            while start.shape[0] < n:
                _, Z2 = tilt.propose(n, rng)
                start = np.concatenate([start, tilt.to_original(Z2)])
            draws = _gibbs_tmvn(S, lo, start, n, rng, CONFIG.gibbs_burn_in, CONFIG.gibbs_thin)
            res = TmvnDraws(draws + spec.mean, "gibbs-fallback", rate,
                            {"psistar": tilt.psistar, "burn_in": CONFIG.gibbs_burn_in,
                             "thin": CONFIG.gibbs_thin})
            return res if return_info else res.draws
        need = n - n_acc
        batch = int(math.ceil(1.2 * need / max(rate, accept_floor))) + 16
    Z = np.concatenate(chunks, axis=1)[:, :n]
    draws = tilt.to_original(Z) + spec.mean
    res = TmvnDraws(draws, "tilting", n_acc / n_prop,
                    {"psistar": tilt.psistar, "solved": tilt.solved})
    return res if return_info else res.draws


# ---------------------------------------------------------------------------
# moments


def _log_cdf_cond(b, S, idx, vals, rel_accuracy):
    """log P(W_rest <= b_rest | W_idx = vals) for W ~ N(0, S)."""
    d = b.shape[0]
    rest = [q for q in range(d) if q not in idx]
    if not rest:
        return 0.0
    Sii = S[np.ix_(idx, idx)]
    Sri = S[np.ix_(rest, idx)]
    A = np.linalg.solve(Sii, Sri.T).T
    cm = A @ vals
    cc = S[np.ix_(rest, rest)] - A @ Sri.T
    return mvn_cdf_shifted(b[rest], cm, symmetrize(cc), rel_accuracy=rel_accuracy).log_value


def tn_moments(spec, *, max_dim=None, rel_accuracy=1e-5):
    """First two moments of N(mean, cov) truncated to x >= lower.

    One dimension uses the Mills-ratio closed form. In higher dimension the
    moments follow from first and second derivatives of the Gaussian CDF
    with respect to the truncation points, each of which is a lower
    dimensional Gaussian CDF evaluated with ``mvn_cdf``.
    """
    max_dim = CONFIG.moment_dim_cap if max_dim is None else max_dim
    d = spec.dim
    if d > max_dim:
        raise MomentDimExceeded(f"dimension {d} exceeds moment cap {max_dim}")
    if d == 1:
        m, v, logp = tn1_moments(spec.lower, spec.mean, math.sqrt(spec.cov[0, 0]))
        if logp[0] == -math.inf:
            raise RegionTooImprobable("truncation region has zero probability")
        return TnMoments(m, v.reshape(1, 1))

    # W = mean - X ~ N(0, S) restricted to W <= b
    S = spec.cov
    b = spec.mean - spec.lower
    finite = np.isfinite(b)
    log_alpha = mvn_cdf_shifted(b, np.zeros(d), S, rel_accuracy=rel_accuracy).log_value
    if log_alpha == -math.inf:
        raise RegionTooImprobable("truncation region has zero probability")
    sdiag = np.diag(S)

    F = np.zeros(d)
    for k in np.nonzero(finite)[0]:
        lphi = -0.5 * b[k] ** 2 / sdiag[k] - 0.5 * (LOG_2PI + math.log(sdiag[k]))
        lc = _log_cdf_cond(b, S, [k], b[[k]], rel_accuracy)
        F[k] = math.exp(lphi + lc - log_alpha)

    Fkq = np.zeros((d, d))
    for k in range(d):
        for q in range(k + 1, d):
            if not (finite[k] and finite[q]):
                continue
            idx = [k, q]
            S2 = S[np.ix_(idx, idx)]
            v = b[idx]
            det = S2[0, 0] * S2[1, 1] - S2[0, 1] ** 2
            quad = (S2[1, 1] * v[0] ** 2 - 2 * S2[0, 1] * v[0] * v[1] + S2[0, 0] * v[1] ** 2) / det
            lphi2 = -0.5 * quad - LOG_2PI - 0.5 * math.log(det)
            lc = _log_cdf_cond(b, S, idx, v, rel_accuracy)
            Fkq[k, q] = Fkq[q, k] = math.exp(lphi2 + lc - log_alpha)

    ew = -S @ F
    bF = np.where(finite, b, 0.0) * F
    eww = S - S @ np.diag(bF / sdiag) @ S
    for k in range(d):
        for q in range(d):
            if q == k or Fkq[k, q] == 0.0:
                continue
            eww += Fkq[k, q] * np.outer(S[:, k], S[:, q] - S[k, q] / sdiag[k] * S[:, k])
    cov = symmetrize(eww - np.outer(ew, ew))
    return TnMoments(spec.mean - ew, cov)
