import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import log_ndtr

import _oracles as orc
from sunreg import (
    Dataset,
    MaxIterExceeded,
    SunParams,
    build_linear,
    build_multivariate_probit,
    build_probit,
    build_tobit,
    concat_likelihoods,
    ep,
    ep_scalable,
    log_marginal_likelihood,
    mf_vb,
    pfm_vb,
    sun_moments,
    update,
)


def tobit_instance(n, p, seed, prior_var=4.0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = np.maximum(X @ rng.standard_normal(p) + rng.standard_normal(n), 0.0)
    prior = SunParams(np.zeros(p), prior_var * np.eye(p))
    return prior, build_tobit(Dataset(X, y), 1.0)


def single_block_instance():
    # one unit with three correlated binary outcomes: a single CDF block
    X = np.array([[[1.0, 0.3], [0.4, -0.8], [-0.6, 0.5]]])
    Sigma = np.array([[1.0, 0.4, 0.2], [0.4, 1.0, 0.3], [0.2, 0.3, 1.0]])
    lik = build_multivariate_probit(Dataset(X, [[1, 0, 1]]), Sigma)
    return SunParams(np.array([0.2, -0.1]), np.array([[1.5, 0.3], [0.3, 1.0]])), lik


def probit_1d_posterior_mean(x, prior_var):
    f = lambda b: math.exp(orc.norm_logpdf(b / math.sqrt(prior_var))  # noqa: E731
                           + sum(log_ndtr(v * b) for v in x))
    Z = integrate.quad(f, -30, 30, epsabs=1e-14)[0]
    return integrate.quad(lambda b: b * f(b), -30, 30, epsabs=1e-14)[0] / Z


# ---------------------------------------------------------------------------
# variational Bayes


def test_vb_gaussian_case_is_exact():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((8, 3))
    prior = SunParams(np.zeros(3), 2 * np.eye(3))
    b = update(prior, build_linear(Dataset(X, rng.standard_normal(8)), 0.5))
    for fit in (mf_vb, pfm_vb):
        st_ = fit(b)
        assert st_.n_iter <= 1 and st_.converged
        assert np.allclose(st_.beta_mean, b.posterior.xi, atol=1e-12)
        assert np.allclose(st_.beta_cov, b.posterior.Omega, atol=1e-12)


def cavi_probit_1d(x, tau2, iters=10_000):
    # textbook CAVI on the augmented probit, written in beta-space
    s2 = 1.0 / (1.0 / tau2 + x * x)
    m = 0.0
    for _ in range(iters):
        mu = x * m
        ez = mu + math.exp(orc.norm_logpdf(mu) - log_ndtr(mu))
        m_new = s2 * x * ez
        if abs(m_new - m) < 1e-15:
            break
        m = m_new
    return m


@pytest.mark.parametrize("x,tau2", [(0.5, 1.0), (1.0, 0.5), (1.3, 4.0)])
def test_mf_matches_textbook_cavi(x, tau2):
    b = update(SunParams([0.0], [[tau2]]), build_probit(Dataset([[x]], [1])))
    assert abs(mf_vb(b, 1e-12, 10_000).beta_mean[0] - cavi_probit_1d(x, tau2)) <= 1e-6


def test_mf_probit_single_observation():
    # mean-field shrinkage grows with signal strength; this is a weak-signal case
    x, tau2 = np.array([0.5]), 1.0
    b = update(SunParams([0.0], [[tau2]]), build_probit(Dataset(x[:, None], [1])))
    ref = probit_1d_posterior_mean(x, tau2)
    got = mf_vb(b).beta_mean[0]
    assert abs(got / ref - 1) <= 0.10


@settings(max_examples=50, deadline=None)
@given(st.integers(5, 30), st.integers(1, 8), st.integers(0, 10**6))
def test_elbo_traces_non_decreasing(n, p, seed):
    prior, lik = tobit_instance(n, p, seed)
    if lik.n0 == 0:
        return
    b = update(prior, lik)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MaxIterExceeded)
        for fit in (mf_vb, pfm_vb):
            trace = np.array(fit(b, 1e-8, 300).elbo_trace)
            assert np.all(np.diff(trace) >= -1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_pfm_elbo_dominates_mf(seed):
    prior, lik = tobit_instance(25, 6, seed)
    b = update(prior, lik)
    mf, pfm = mf_vb(b, 1e-9, 5000), pfm_vb(b, 1e-9, 5000)
    assert pfm.elbo >= mf.elbo - 1e-8
    # both are lower bounds of the same log-normalizer
    logz = log_marginal_likelihood(prior, lik) - lik.c_const - b.log_gauss_evidence
    assert pfm.elbo <= logz + 1e-6


def test_pfm_single_block_is_exact():
    prior, lik = single_block_instance()
    b = update(prior, lik)
    st_ = pfm_vb(b)
    m, c = sun_moments(b.posterior)
    assert np.allclose(st_.beta_mean, m, atol=1e-6)
    assert np.allclose(st_.beta_cov, c, atol=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_pfm_covariance_spd(seed):
    prior, lik = tobit_instance(30, 10, seed)
    cov = pfm_vb(update(prior, lik)).beta_cov
    assert np.allclose(cov, cov.T)
    assert np.linalg.eigvalsh(cov).min() > 0


def test_vb_max_iter_warns():
    prior, lik = tobit_instance(30, 5, 1)
    b = update(prior, lik)
    with pytest.warns(MaxIterExceeded):
        st_ = mf_vb(b, 1e-14, 2)
    assert not st_.converged and st_.n_iter == 2


def test_vb_block_partition():
    # bivariate blocks go through the block (not scalar) truncated-normal path
    rng = np.random.default_rng(3)
    X = rng.standard_normal((10, 2))
    y = rng.integers(0, 2, (10, 2)).astype(float)
    prior = SunParams(np.zeros(4), 2 * np.eye(4))
    b = update(prior, build_multivariate_probit(Dataset(X, y), [[1.0, 0.5], [0.5, 1.0]]))
    mf, pfm = mf_vb(b), pfm_vb(b)
    assert mf.converged and pfm.converged
    assert all(z.shape == (2,) for z in pfm.z_means)
    assert pfm.elbo >= mf.elbo - 1e-8
    assert np.all(np.diff(pfm.elbo_trace) >= -1e-8)


# ---------------------------------------------------------------------------
# expectation propagation


def test_ep_single_site_is_exact():
    prior, lik = single_block_instance()
    st_ = ep(prior, lik)
    m, c = sun_moments(update(prior, lik).posterior)
    assert np.allclose(st_.mean, m, atol=1e-8)
    assert np.allclose(st_.cov, c, atol=1e-8)
    assert abs(st_.log_evidence - log_marginal_likelihood(prior, lik)) <= 1e-8


def test_ep_probit_two_points_vs_quadrature():
    x, tau2 = np.array([0.9, -0.4]), 2.0
    st_ = ep(SunParams([0.0], [[tau2]]), build_probit(Dataset(x[:, None], [1, 1])))
    assert abs(st_.mean[0] - probit_1d_posterior_mean(x, tau2)) <= 1e-3


@pytest.mark.parametrize("seed", range(4))
def test_ep_log_evidence_near_exact(seed):
    prior, lik = tobit_instance(24, 4, 20 + seed)
    assert 0 < lik.n0 <= 20
    exact, se = log_marginal_likelihood(prior, lik, return_se=True)
    assert abs(ep(prior, lik).log_evidence - exact) <= 0.05 + 3 * se


@pytest.mark.parametrize("p", [3, 20, 50])
def test_dense_and_scalable_agree(p):
    prior, lik = tobit_instance(30, p, p)
    a, b = ep(prior, lik), ep_scalable(prior, lik)
    assert a.n_iter == b.n_iter
    assert np.allclose(a.mean, b.mean, atol=1e-8)
    assert np.allclose(a.cov, b.cov, atol=1e-8)
    assert np.allclose(a.r_global, b.r_global, atol=1e-8)
    X0 = lik.cdf.X
    assert np.allclose(a.cov @ X0.T, b.cov @ X0.T, atol=1e-8)


def test_ep_state_is_sum_of_sites():
    prior, lik = tobit_instance(25, 4, 7)
    st_ = ep(prior, lik)
    Q = np.linalg.inv(prior.Omega) + lik.gauss.X.T @ np.linalg.solve(lik.gauss.Sigma, lik.gauss.X)
    X0 = lik.cdf.X
    for c, K in enumerate(st_.Q_factors):
        Q = Q + X0[[c]].T @ K @ X0[[c]]
    assert np.allclose(Q @ st_.cov, np.eye(4), atol=1e-8)
    assert np.allclose(Q @ st_.mean, st_.r_global, atol=1e-8)
    assert np.linalg.eigvalsh(st_.cov).min() > 0


def test_ep_sweep_order_invariance():
    prior, lik = tobit_instance(30, 5, 8)
    a = ep(prior, lik, tol=1e-10)
    b = ep(prior, lik, tol=1e-10, order=list(range(lik.n0))[::-1])
    assert np.allclose(a.mean, b.mean, atol=1e-6)


def test_ep_no_cdf_sites():
    prior = SunParams(np.zeros(3), np.eye(3))
    lik = build_linear(Dataset(np.eye(3), [0.5, 0.1, -0.2]), 1.0)
    post = update(prior, lik).posterior
    for fit in (ep, ep_scalable):
        st_ = fit(prior, lik)
        assert st_.n_iter == 1
        assert np.allclose(st_.mean, post.xi) and np.allclose(st_.cov, post.Omega)


def test_ep_accepts_bundle():
    prior, lik = tobit_instance(20, 3, 9)
    a, b = ep(prior, lik), ep(update(prior, lik))
    assert np.array_equal(a.mean, b.mean)


def test_ep_skewed_prior_folding():
    # a SUN prior from one probit observation is the same site as that observation
    x_a = np.array([[0.7, -0.2]])
    rng = np.random.default_rng(10)
    X_b = rng.standard_normal((6, 2))
    base = SunParams(np.zeros(2), 2 * np.eye(2))
    A = build_probit(Dataset(x_a, [1]))
    B = build_probit(Dataset(X_b, [1, 0, 0, 1, 1, 0]))
    skewed = update(base, A).posterior
    a = ep(skewed, B, tol=1e-10)
    b = ep(base, concat_likelihoods([A, B]), tol=1e-10)
    assert np.allclose(a.mean, b.mean, atol=1e-8)
    assert np.allclose(a.cov, b.cov, atol=1e-8)
    shift = log_marginal_likelihood(base, A)
    assert abs(a.log_evidence + shift - b.log_evidence) <= 1e-8


def test_ep_max_iter_warns():
    prior, lik = tobit_instance(30, 5, 11)
    with pytest.warns(MaxIterExceeded):
        st_ = ep(prior, lik, tol=1e-15, max_iter=1)
    assert not st_.converged
