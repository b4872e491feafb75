import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import ndtr
from scipy.stats import multivariate_normal, t as student_t

import _oracles as orc
from sunreg.config import CONFIG

# the QMC standard error comes from a handful of randomizations, so errors
# standardized by it follow a t law; 1e-4 two-sided per property example
QMC_Z = float(student_t.ppf(1 - 0.5e-4, CONFIG.n_shifts - 1))
from sunreg import (
    McdfResult,
    NonPositiveDefinite,
    DimensionMismatch,
    RegionTooImprobable,
    MomentDimExceeded,
    TruncNormalSpec,
    mvn_cdf,
    mvn_cdf_shifted,
    sample_tmvn,
    tn_moments,
)
from sunreg.mvn_kernel import ln_normal_prob, tn1_moments, trandn


def test_univariate_median():
    r = mvn_cdf([0.0], [[1.0]])
    assert abs(r.value - 0.5) <= 1e-12
    assert r.std_error >= 0


def test_full_support_is_one():
    r = mvn_cdf([np.inf, np.inf], np.eye(2))
    assert r.value == 1.0
    assert r.log_value == 0.0


def test_bivariate_orthant_half_correlation():
    r = mvn_cdf([0.0, 0.0], [[1, 0.5], [0.5, 1]])
    assert abs(r.value - (0.25 + math.asin(0.5) / (2 * math.pi))) <= 1e-6


def test_shifted_centered():
    assert abs(mvn_cdf_shifted([1.0], [1.0], [[4.0]]).value - 0.5) <= 1e-12


def test_shifted_univariate_against_erf():
    ref = 0.5 * (1 + math.erf(2 / math.sqrt(2)))
    assert abs(mvn_cdf_shifted([2.0], [0.0], [[1.0]]).value - ref) <= 1e-8


def test_shifted_scale_invariance():
    a = mvn_cdf_shifted([0, 0], [0, 0], [[2, 1], [1, 2]]).value
    b = mvn_cdf([0, 0], [[1, 0.5], [0.5, 1]]).value
    assert abs(a - b) <= 1e-12


def test_trivariate_against_owens_t_conditioning():
    # P(Z <= b) for an equicorrelated trivariate normal: 1-D integral over the
    # common factor of a product of univariate CDFs
    rho = 0.4
    b = np.array([0.3, -0.5, 1.1])
    R = np.full((3, 3), rho) + (1 - rho) * np.eye(3)

    def f(w):
        return orc.norm_pdf(w) * np.prod(ndtr((b - math.sqrt(rho) * w) / math.sqrt(1 - rho)))

    ref, _ = integrate.quad(f, -12, 12, epsabs=1e-14, epsrel=1e-12)
    assert abs(mvn_cdf(b, R).value - ref) <= 1e-9


@pytest.mark.parametrize("d", [4, 6, 9])
def test_qmc_equicorrelated(d):
    rho = 0.3
    b = np.linspace(-0.5, 1.0, d)
    R = np.full((d, d), rho) + (1 - rho) * np.eye(d)

    def f(w):
        return orc.norm_pdf(w) * np.prod(ndtr((b - math.sqrt(rho) * w) / math.sqrt(1 - rho)))

    ref, _ = integrate.quad(f, -12, 12, epsabs=1e-14, epsrel=1e-12)
    r = mvn_cdf(b, R, 1e-5)
    assert r.std_error <= 1e-5 or r.n_samples >= 2**20
    assert abs(r.value - ref) <= 3 * r.std_error + 1e-7


def test_log_value_survives_underflow():
    d = 5
    R = np.eye(d) * 0.6 + 0.4
    r = mvn_cdf(np.full(d, -30.0), R)
    assert r.value == 0.0 or r.value < 1e-200
    assert np.isfinite(r.log_value)
    assert r.log_value < -400


def test_tiny_orthant_matches_independent_product():
    r = mvn_cdf(np.full(4, -20.0), np.eye(4))
    assert abs(r.log_value - 4 * float(np.log(ndtr(-20.0)))) <= 1e-6 * abs(r.log_value)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        mvn_cdf([0, 0], np.eye(3))


def test_non_pd_raises():
    R = np.array([[1, 0.9, -0.9], [0.9, 1, 0.9], [-0.9, 0.9, 1]])
    with pytest.raises(NonPositiveDefinite):
        mvn_cdf([0, 0, 0], R)


def test_result_invariants():
    r = mvn_cdf([0.2, -0.1, 0.4, 0.0], np.eye(4) * 0.5 + 0.5)
    assert isinstance(r, McdfResult)
    assert 0 <= r.value <= 1
    assert r.std_error >= 0
    assert abs(r.log_value - math.log(r.value)) <= 1e-12


def test_bit_identical_for_fixed_seed():
    R = np.eye(5) * 0.5 + 0.5
    a = mvn_cdf(np.linspace(-1, 1, 5), R, seed=7)
    b = mvn_cdf(np.linspace(-1, 1, 5), R, seed=7)
    assert a == b


@st.composite
def _corr_case(draw, dmin=2, dmax=6):
    d = draw(st.integers(dmin, dmax))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    return orc.random_correlation(d, rng, 0.8), rng.uniform(-1.5, 1.5, d), rng


@settings(max_examples=25, deadline=None)
@given(_corr_case())
def test_monotone_in_upper(case):
    R, b, rng = case
    r0 = mvn_cdf(b, R)
    b2 = b.copy()
    b2[rng.integers(len(b))] += rng.uniform(0.05, 1.0)
    r1 = mvn_cdf(b2, R)
    assert r1.value >= r0.value - 2 * (r0.std_error + r1.std_error) - 1e-12


@settings(max_examples=25, deadline=None)
@given(_corr_case())
def test_permutation_invariance(case):
    R, b, rng = case
    perm = rng.permutation(len(b))
    r0 = mvn_cdf(b, R)
    r1 = mvn_cdf(b[perm], R[np.ix_(perm, perm)])
    assert abs(r0.value - r1.value) <= QMC_Z * math.hypot(r0.std_error, r1.std_error) + 1e-10


@settings(max_examples=20, deadline=None)
@given(_corr_case(2, 3), _corr_case(2, 3))
def test_block_diagonal_factorizes(c1, c2):
    (R1, b1, _), (R2, b2, _) = c1, c2
    d1, d2 = len(b1), len(b2)
    R = np.zeros((d1 + d2, d1 + d2))
    R[:d1, :d1], R[d1:, d1:] = R1, R2
    joint = mvn_cdf(np.concatenate([b1, b2]), R)
    a, b = mvn_cdf(b1, R1), mvn_cdf(b2, R2)
    se = math.sqrt(joint.std_error**2 + (a.std_error * b.value) ** 2 + (b.std_error * a.value) ** 2)
    assert abs(joint.value - a.value * b.value) <= QMC_Z * se + 1e-10


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.95, 0.95), st.floats(-3, 3), st.floats(-3, 3))
def test_bivariate_against_owens_t(rho, h, k):
    ref = float(orc.bvn_cdf(h, k, rho))
    assert abs(mvn_cdf([h, k], [[1, rho], [rho, 1]]).value - ref) <= 1e-10


def test_ln_normal_prob_tails():
    assert abs(ln_normal_prob(40.0, np.inf) - (-804.6084420137538)) < 1e-6
    assert abs(ln_normal_prob(-1.0, 1.0) - math.log(math.erf(1 / math.sqrt(2)))) < 1e-14


def test_tn1_half_normal():
    m, v, logp = tn1_moments(0.0, 0.0, 1.0)
    assert abs(m - math.sqrt(2 / math.pi)) <= 1e-14
    assert abs(v - (1 - 2 / math.pi)) <= 1e-14
    assert abs(logp - math.log(0.5)) <= 1e-14


def test_tn1_against_quadrature():
    lower, mean, sd = 1.3, -0.4, 0.7
    Z, _ = integrate.quad(lambda x: orc.norm_pdf((x - mean) / sd) / sd, lower, np.inf)
    m1, _ = integrate.quad(lambda x: x * orc.norm_pdf((x - mean) / sd) / sd / Z, lower, np.inf)
    m2, _ = integrate.quad(lambda x: x * x * orc.norm_pdf((x - mean) / sd) / sd / Z, lower, np.inf)
    m, v, _ = tn1_moments(lower, mean, sd)
    assert abs(m - m1) <= 1e-10
    assert abs(v - (m2 - m1**2)) <= 1e-9


def test_trandn_bounds():
    rng = np.random.default_rng(0)
    lo = np.array([-np.inf, -2.0, 5.0, 30.0])
    hi = np.array([0.0, 1.0, np.inf, 31.0])
    x = trandn(np.repeat(lo, 1000), np.repeat(hi, 1000), rng)
    assert np.all(x >= np.repeat(lo, 1000)) and np.all(x <= np.repeat(hi, 1000))


def test_tn_moments_half_normal():
    tm = tn_moments(TruncNormalSpec([0.0], [0.0], [[1.0]]))
    assert abs(tm.mean[0] - math.sqrt(2 / math.pi)) <= 1e-12
    assert abs(tm.cov[0, 0] - (1 - 2 / math.pi)) <= 1e-12


def test_tn_moments_untruncated():
    S = np.array([[2.0, 0.3, 0.1], [0.3, 1.0, -0.2], [0.1, -0.2, 0.5]])
    tm = tn_moments(TruncNormalSpec(np.full(3, -np.inf), [1.0, -1.0, 0.5], S))
    assert np.allclose(tm.mean, [1.0, -1.0, 0.5], atol=1e-12)
    assert np.allclose(tm.cov, S, atol=1e-12)


def test_tn_moments_bivariate_against_dblquad():
    mean = np.array([0.2, -0.3])
    S = np.array([[1.0, 0.5], [0.5, 1.5]])
    lower = np.array([0.0, -0.5])
    pdf = multivariate_normal(mean, S).pdf

    def mom(g):
        return integrate.dblquad(lambda y, x: g(x, y) * pdf([x, y]), lower[0], 12,
                                 lower[1], 12, epsabs=1e-12, epsrel=1e-10)[0]

    Z = mom(lambda x, y: 1.0)
    m = np.array([mom(lambda x, y: x), mom(lambda x, y: y)]) / Z
    exx = mom(lambda x, y: x * x) / Z
    exy = mom(lambda x, y: x * y) / Z
    eyy = mom(lambda x, y: y * y) / Z
    cov = np.array([[exx, exy], [exy, eyy]]) - np.outer(m, m)
    tm = tn_moments(TruncNormalSpec(lower, mean, S))
    assert np.allclose(tm.mean, m, atol=1e-7)
    assert np.allclose(tm.cov, cov, atol=1e-7)


def test_tn_moments_dim_cap():
    with pytest.raises(MomentDimExceeded):
        tn_moments(TruncNormalSpec(np.zeros(9), np.zeros(9), np.eye(9)))


def test_sample_half_normal_mean():
    x = sample_tmvn(TruncNormalSpec([0.0], [0.0], [[1.0]]), 100_000, np.random.default_rng(1))
    assert abs(x.mean() - math.sqrt(2 / math.pi)) <= 0.01


def test_sample_untruncated_moments():
    S = np.array([[1.0, 0.6], [0.6, 2.0]])
    n = 100_000
    x = sample_tmvn(TruncNormalSpec([-np.inf, -np.inf], [1.0, -1.0], S), n,
                    np.random.default_rng(2))
    se = np.sqrt(np.diag(S) / n)
    assert np.all(np.abs(x.mean(0) - [1.0, -1.0]) <= 3 * se)
    assert np.allclose(np.cov(x.T), S, atol=0.03)


def test_sample_support():
    x = sample_tmvn(TruncNormalSpec([0.0, 0.0], [0.0, 0.0], np.eye(2)), 5000,
                    np.random.default_rng(3))
    assert x.shape == (5000, 2)
    assert np.all(x >= 0)


def test_sample_matches_tn_moments_bivariate():
    spec = TruncNormalSpec([0.0, 0.0], [0.0, 0.0], [[1, 0.5], [0.5, 1]])
    n = 1_000_000
    x = sample_tmvn(spec, n, np.random.default_rng(4))
    tm = tn_moments(spec)
    se = x.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(x.mean(0) - tm.mean) <= 3 * se)


def test_sample_deep_tail_is_exact_tilting():
    d = 6
    R = np.eye(d) * 0.5 + 0.5
    spec = TruncNormalSpec(np.full(d, 3.0), np.zeros(d), R)
    res = sample_tmvn(spec, 2000, np.random.default_rng(5), return_info=True)
    assert res.method == "tilting"
    assert np.all(res.draws >= 3.0)


def test_sample_fallback_flagged_and_disabled():
    spec = TruncNormalSpec([0.0, 0.0], [0.0, 0.0], [[1, -0.5], [-0.5, 1]])
    res = sample_tmvn(spec, 3000, np.random.default_rng(6), accept_floor=1.01, return_info=True)
    assert res.method == "gibbs-fallback"
    assert res.draws.shape == (3000, 2) and np.all(res.draws >= 0)
    with pytest.raises(RegionTooImprobable):
        sample_tmvn(spec, 3000, np.random.default_rng(6), accept_floor=1.01, allow_fallback=False)


def test_sample_seed_determinism():
    spec = TruncNormalSpec([0.0, 0.5, -1.0], [0.1, 0.0, 0.0], np.eye(3) * 0.7 + 0.3)
    a = sample_tmvn(spec, 100, np.random.default_rng(9))
    b = sample_tmvn(spec, 100, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_spec_validation():
    with pytest.raises(DimensionMismatch):
        TruncNormalSpec([0.0], [0.0, 1.0], np.eye(2))
    with pytest.raises(ValueError):
        TruncNormalSpec([0, 0], [0, 0], [[1.0, 0.2], [0.3, 1.0]])
