"""Exact posterior samplers: data-augmentation Gibbs and i.i.d. draws."""

from dataclasses import dataclass, field

import numpy as np

from ._linalg import as_rng, chol, seed_of
from .mvn_kernel import TruncNormalSpec, sample_tmvn, trandn
from .sun_core import sun_sample


@dataclass
class ChainOutput:
    draws: np.ndarray
    z_draws: np.ndarray | None
    seed: int | None
    burn_in: int
    method: str
    meta: dict = field(default_factory=dict)


def _beta_given_z(bundle, z, L, rng):
    post = bundle.posterior
    noise = rng.standard_normal(z.shape[:-1] + (post.p,)) @ L.T
    return post.xi + (z - post.gamma) @ bundle.A_post.T + noise


def _block_groups(blocks, Sig):
    """Blocks of equal size stacked as (index matrix, Cholesky factors)."""
    by_size = {}
    for sl in blocks:
        by_size.setdefault(sl.stop - sl.start, []).append(np.arange(sl.start, sl.stop))
    out = []
    for idx in by_size.values():
        idx = np.array(idx)
        out.append((idx, np.array([chol(Sig[np.ix_(i, i)])[0] for i in idx])))
    return out


def _draw_blocks(mu, chols, Sig, idx, rng, batches=(1, 8, 64, 512, 4096)):
    """Exact TN(0; mu_c, Sigma_c) draws for many blocks.

    Rejection from the untruncated block normals with growing batches (the
    first accepted proposal of each block is kept); blocks whose orthant is
    still unmatched go to the tilting sampler.
    """
    nb, k = mu.shape
    out = np.empty_like(mu)
    todo = np.arange(nb)
    for m in batches:
        eps = rng.standard_normal((todo.size, m, k))
        x = mu[todo, None, :] + np.einsum("bij,bmj->bmi", chols[todo], eps)
        ok = np.all(x > 0, axis=2)
        hit = ok.any(axis=1)
        first = ok.argmax(axis=1)
        out[todo[hit]] = x[hit, first[hit]]
        todo = todo[~hit]
        if todo.size == 0:
            return out
    for b in todo:
        i = idx[b]
        spec = TruncNormalSpec(np.zeros(i.size), mu[b], Sig[np.ix_(i, i)])
        out[b] = sample_tmvn(spec, 1, rng)[0]
    return out


def gibbs(bundle, n_iter, burn_in=500, rng=None, *, keep_z=False):
    """Alternate beta | z (Gaussian) and z | beta (truncated normal, one partition block at a time)."""
    n_iter, burn_in = int(n_iter), int(burn_in)
    if n_iter < 1 or burn_in < 0:
        raise ValueError("n_iter must be >= 1 and burn_in >= 0")
    seed = seed_of(rng)
    rng = as_rng(rng)
    post = bundle.posterior
    L, _ = chol(bundle.V_post)
    N = bundle.n_latent
    draws = np.empty((n_iter, post.p))
    zs = np.empty((n_iter, N)) if keep_z else None
    if N == 0:
        draws[:] = post.xi + rng.standard_normal((n_iter, post.p)) @ L.T
        return ChainOutput(draws, zs, seed, 0, "gibbs")

    blocks = bundle.blocks()
    single = np.array([sl.stop - sl.start == 1 for sl in blocks])
    idx1 = np.array([sl.start for sl, s in zip(blocks, single) if s], dtype=int)
    multi = [sl for sl, s in zip(blocks, single) if not s]
    sd1 = np.sqrt(np.diag(bundle.Sigma_post)[idx1])
    X, eta, Sig = bundle.X_post, bundle.eta_post, bundle.Sigma_post
    inf1 = np.full(idx1.size, np.inf)

    groups = _block_groups(multi, Sig)
    beta = post.xi.copy()
    z = np.empty(N)
    for it in range(burn_in + n_iter):
        m = eta + X @ beta
        if idx1.size:
            mu = m[idx1]
            z[idx1] = mu + sd1 * trandn(-mu / sd1, inf1, rng)
        for idx, chols in groups:
            z[idx] = _draw_blocks(m[idx], chols, Sig, idx, rng)
        beta = _beta_given_z(bundle, z, L, rng)
        if it >= burn_in:
            draws[it - burn_in] = beta
            if keep_z:
                zs[it - burn_in] = z
    return ChainOutput(draws, zs, seed, burn_in, "gibbs")


def iid(bundle, n, rng=None, *, route="auto"):
    """Independent posterior draws.

    route="marginal" draws z ~ N(gamma, Gamma) truncated to z >= 0 and then
    beta | z; route="additive" uses the additive representation of the
    posterior directly. "auto" picks the additive route.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    if route not in ("auto", "additive", "marginal"):
        raise ValueError(f"unknown route {route!r}")
    seed = seed_of(rng)
    rng = as_rng(rng)
    post = bundle.posterior
    if route in ("auto", "additive"):
        s = sun_sample(post, n, rng)
        return ChainOutput(s.draws, None, seed, 0, "iid", dict(s.meta, route="additive"))
    L, _ = chol(bundle.V_post)
    if post.nbar == 0:
        draws = post.xi + rng.standard_normal((n, post.p)) @ L.T
        return ChainOutput(draws, np.zeros((n, 0)), seed, 0, "iid", {"route": "marginal"})
    spec = TruncNormalSpec(np.zeros(post.nbar), post.gamma, post.Gamma)
    res = sample_tmvn(spec, n, rng, return_info=True)
    draws = _beta_given_z(bundle, res.draws, L, rng)
    return ChainOutput(draws, res.draws, seed, 0, "iid",
                       {"route": "marginal", "method": res.method, "acceptance": res.acceptance})


def effective_sample_size(x):
    """ESS per column via FFT autocorrelations and Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft, axis=0)
    acov = np.fft.irfft(f * np.conj(f), nfft, axis=0)[:n] / n
    out = np.empty(x.shape[1])
    for j in range(x.shape[1]):
        if acov[0, j] <= 0:
            out[j] = n
            continue
        rho = acov[:, j] / acov[0, j]
        tau = -1.0
        for k in range(0, n - 1, 2):
            pair = rho[k] + rho[k + 1]
            if pair <= 0:
                break
            tau += 2 * pair
        out[j] = n / max(tau, 1e-12)
    return out
