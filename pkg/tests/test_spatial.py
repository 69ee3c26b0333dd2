import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from spatialcp.exceptions import DimensionMismatch, NotPositiveDefinite
from spatialcp.predictors import fit_ols
from spatialcp.spatial import (
    GLSModel,
    SpatialParams,
    build_covariance,
    fit_gls,
    fit_mle,
    fit_oracle,
    log_likelihood,
    oracle_scores,
    oracle_test_score,
    predict_gls,
    sample_synthetic,
)

TRUE = SpatialParams(sigma_eps2=0.3, sigma2=0.2, rho=4.0)


def _design(rng, n, p=3):
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    loc = rng.uniform(0, 3, size=(n, 2))
    return X, loc


def _dense_loglik(params, X, y, loc):
    """Profiled log-likelihood by explicit inverse and determinant."""
    d = np.sqrt(((loc[:, None, :] - loc[None, :, :]) ** 2).sum(-1))
    S = params.sigma2 * np.exp(-params.rho * d) + params.sigma_eps2 * np.eye(len(y))
    Si = np.linalg.inv(S)
    beta = np.linalg.inv(X.T @ Si @ X) @ X.T @ Si @ y
    r = y - X @ beta
    n = len(y)
    return -0.5 * (n * math.log(2 * math.pi) + math.log(np.linalg.det(S)) + r @ Si @ r)


# -- covariance ----------------------------------------------------------------


def test_params_validation():
    with pytest.raises(ValueError):
        SpatialParams(-1.0, 0.2, 4.0)
    with pytest.raises(ValueError):
        SpatialParams(0.1, 0.2, 0.0)
    p = SpatialParams(0.5, 0.2, 4.0)
    assert SpatialParams.from_dict(json.loads(json.dumps(p.to_dict()))) == p


def test_nugget_only_covariance_is_scaled_identity(rng):
    loc = rng.uniform(size=(6, 2))
    cov = build_covariance(loc, SpatialParams(0.7, 0.0, 4.0))
    np.testing.assert_array_equal(cov.matrix, 0.7 * np.eye(6))


def test_half_distance():
    assert SpatialParams(0.3, 0.2, 4.0).half_distance() == pytest.approx(math.log(2) / 4)
    assert abs(SpatialParams(0.3, 0.2, 4.0).half_distance() - 0.1733) < 0.005
    cov = build_covariance([[0, 0], [math.log(2) / 4, 0]], SpatialParams(0.3, 0.2, 4.0))
    assert cov.matrix[0, 1] == pytest.approx(0.1)


def test_coincident_points():
    cov = build_covariance([[1, 1], [1, 1]], SpatialParams(0.3, 0.2, 4.0))
    np.testing.assert_allclose(cov.matrix, [[0.5, 0.2], [0.2, 0.5]])


def test_everywhere_mode():
    p = SpatialParams(0.3, 0.2, 4.0)
    cov = build_covariance([[0, 0], [1, 0]], p, nugget_mode="everywhere")
    assert cov.matrix[0, 1] == pytest.approx(0.2 * math.exp(-4) + 0.3)
    with pytest.raises(NotPositiveDefinite):
        build_covariance([[0, 0], [1, 0]], SpatialParams(0.3, 0.0, 4.0), nugget_mode="everywhere")


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(0, 10_000))
def test_covariance_symmetric_and_reconstructs(n, seed):
    rng = np.random.default_rng(seed)
    cov = build_covariance(rng.uniform(0, 5, size=(n, 2)), SpatialParams(0.1, 0.5, 2.0))
    assert np.array_equal(cov.matrix, cov.matrix.T)
    rec = cov.chol @ cov.chol.T
    assert np.linalg.norm(rec - cov.matrix) < 1e-8 * np.linalg.norm(cov.matrix)


# -- likelihood ----------------------------------------------------------------


def test_loglik_nugget_only_matches_scalar_oracle(rng):
    X, loc = _design(rng, 40)
    y = rng.normal(size=40)
    p = SpatialParams(0.7, 0.0, 3.0)
    beta = fit_ols(X[:, 1:], y).coefficients
    oracle = stats.norm.logpdf(y, X @ beta, math.sqrt(0.7)).sum()
    assert log_likelihood(p, X, y, loc) == pytest.approx(oracle, rel=1e-10)


def test_loglik_matches_dense_3x3():
    X = np.array([[1.0, 0.2], [1.0, -0.5], [1.0, 1.3]])
    y = np.array([1.0, 0.3, 2.2])
    loc = np.array([[0.0, 0.0], [0.3, 0.1], [0.2, 0.9]])
    p = SpatialParams(0.3, 0.2, 4.0)
    assert abs(log_likelihood(p, X, y, loc) - _dense_loglik(p, X, y, loc)) < 1e-8


def test_loglik_permutation_and_shift_invariance(rng):
    X, loc = _design(rng, 30)
    y = rng.normal(size=30)
    ll = log_likelihood(TRUE, X, y, loc)
    perm = rng.permutation(30)
    assert log_likelihood(TRUE, X[perm], y[perm], loc[perm]) == pytest.approx(ll, rel=1e-10)
    assert log_likelihood(TRUE, X, y + 7.5, loc) == pytest.approx(ll, rel=1e-10)
    assert log_likelihood(TRUE, X, y, loc + [100.0, -40.0]) == pytest.approx(ll, rel=1e-10)


# -- MLE -----------------------------------------------------------------------


def test_mle_recovers_parameters_and_dominates_truth():
    rng = np.random.default_rng(21)
    X, loc = _design(rng, 500)
    beta = np.array([1.0, 0.5, -0.3])
    y = sample_synthetic(X, loc, TRUE, beta, seed=4)
    res = fit_mle(X, y, loc, SpatialParams(0.5, 0.5, 2.0), full_output=True)
    assert res.log_likelihood >= log_likelihood(TRUE, X, y, loc)
    assert res.log_likelihood >= res.init_log_likelihood
    assert 2 <= res.params.rho <= 8
    assert abs(res.params.sigma_eps2 / 0.3 - 1) <= 0.5
    assert abs(res.params.sigma2 / 0.2 - 1) <= 0.5
    _, beta_prof = log_likelihood(res.params, X, y, loc, return_beta=True)
    np.testing.assert_allclose(res.beta, beta_prof)


def test_mle_nugget_only_data():
    rng = np.random.default_rng(8)
    X, loc = _design(rng, 300)
    y = X @ [1.0, 0.5, -0.3] + rng.normal(scale=math.sqrt(0.5), size=300)
    p, _ = fit_mle(X, y, loc, SpatialParams(0.5, 0.5, 2.0))
    assert p.sigma2 <= 0.1 * p.sigma_eps2


def test_mle_keeps_init_when_already_optimal(rng):
    X, loc = _design(rng, 40)
    y = sample_synthetic(X, loc, TRUE, [0, 0, 0], seed=1)
    p, _ = fit_mle(X, y, loc, TRUE)
    assert log_likelihood(p, X, y, loc) >= log_likelihood(TRUE, X, y, loc)


# -- sampler -------------------------------------------------------------------


def test_sampler_nugget_moments(rng):
    n = 10_000
    X = np.ones((n, 1))
    loc = rng.uniform(0, 50, size=(n, 2))
    # sigma2 = 0 keeps this cheap: the Cholesky factor of a scaled identity
    y = sample_synthetic(X, loc, SpatialParams(0.5, 0.0, 1.0), [0.0], seed=2)
    assert abs(y.mean()) < 0.03
    assert abs(y.var() / 0.5 - 1) < 0.05


def test_sampler_covariance_monte_carlo():
    loc = np.array([[0, 0], [0.1, 0], [0.3, 0.2], [1.0, 1.0], [0.1, 0.05]])
    X = np.zeros((5, 1))
    p = SpatialParams(0.3, 0.5, 4.0)
    draws = np.array([sample_synthetic(X, loc, p, [0.0], seed=s) for s in range(20_000)])
    emp = np.cov(draws, rowvar=False)
    np.testing.assert_allclose(emp, build_covariance(loc, p).matrix, atol=0.05)


def test_sampler_reproducible_and_degenerate_guard(rng):
    X, loc = _design(rng, 20)
    a = sample_synthetic(X, loc, TRUE, [1, 2, 3], seed=9)
    assert np.array_equal(a, sample_synthetic(X, loc, TRUE, [1, 2, 3], seed=9))
    with pytest.raises(NotPositiveDefinite):
        sample_synthetic(X, loc, SpatialParams(0.0, 0.0, 4.0), [1, 2, 3], seed=0)


# -- GLS / kriging ---------------------------------------------------------------


@pytest.mark.parametrize("c", [0.01, 1.0, 250.0])
def test_gls_equals_ols_under_iid(rng, c):
    X, loc = _design(rng, 60)
    y = rng.normal(size=60)
    m = fit_gls(X, y, loc, SpatialParams(c, 0.0, 4.0))
    ols = fit_ols(X[:, 1:], y).coefficients
    np.testing.assert_allclose(m.beta, ols, rtol=1e-8, atol=1e-10)
    Xn, ln = _design(rng, 5)
    np.testing.assert_allclose(m.predict(Xn, ln), Xn @ m.beta, atol=1e-12)


def test_gls_normal_equations(rng):
    X, loc = _design(rng, 80)
    y = sample_synthetic(X, loc, TRUE, [1, 0, 0], seed=3)
    m = fit_gls(X, y, loc, TRUE)
    Si = np.linalg.inv(m.cov.matrix)
    lhs = X.T @ Si @ X @ m.beta
    rhs = X.T @ Si @ y
    assert np.linalg.norm(lhs - rhs) <= 1e-6 * np.linalg.norm(rhs)


def test_kriging_interpolates_without_nugget(rng):
    X, loc = _design(rng, 30)
    p = SpatialParams(0.0, 1.0, 2.0)
    y = sample_synthetic(X, loc, p, [1, 1, 1], seed=5)
    m = fit_gls(X, y, loc, p)
    np.testing.assert_allclose(predict_gls(m, X[:4], loc[:4]), y[:4], atol=1e-6)


def test_kriging_matches_dense_oracle():
    X = np.array([[1, 0.1], [1, 0.7], [1, -0.4], [1, 0.3]])
    loc = np.array([[0, 0], [0.2, 0.1], [0.5, 0.5], [0.1, 0.4]])
    y = np.array([1.1, 1.9, 0.2, 1.0])
    p = SpatialParams(0.3, 0.2, 4.0)
    d = np.sqrt(((loc[:, None] - loc[None]) ** 2).sum(-1))
    S = 0.2 * np.exp(-4 * d) + 0.3 * np.eye(4)
    Si = np.linalg.inv(S)
    beta = np.linalg.inv(X.T @ Si @ X) @ X.T @ Si @ y
    x0, l0 = np.array([1, 0.5]), np.array([0.15, 0.2])
    c = 0.2 * np.exp(-4 * np.sqrt(((loc - l0) ** 2).sum(-1)))
    oracle = x0 @ beta + c @ Si @ (y - X @ beta)
    m = fit_gls(X, y, loc, p)
    assert abs(m.predict(x0, l0)[0] - oracle) < 1e-8
    assert abs(predict_gls(m, x0, l0, mode="mean_only")[0] - x0 @ beta) < 1e-8


def test_gls_roundtrip_and_dimension_check(rng):
    X, loc = _design(rng, 25)
    y = rng.normal(size=25)
    m = fit_gls(X, y, loc, TRUE)
    back = GLSModel.from_dict(json.loads(json.dumps(m.to_dict())))
    Xn, ln = _design(rng, 4)
    np.testing.assert_allclose(back.predict(Xn, ln), m.predict(Xn, ln), rtol=1e-12)
    with pytest.raises(DimensionMismatch):
        m.predict(np.ones((2, 2)), ln[:2])


# -- Oracle score ----------------------------------------------------------------


def test_oracle_scores_identity_and_scaled(rng):
    X, _ = _design(rng, 10)
    y = rng.normal(size=10)
    beta = np.array([0.5, 1.0, -1.0])
    r = np.abs(y - X @ beta)
    np.testing.assert_array_equal(oracle_scores(y, X, beta, np.eye(10)), r)
    np.testing.assert_allclose(oracle_scores(y, X, beta, 4 * np.eye(10)), r / 2, rtol=1e-15)
    with pytest.raises(NotPositiveDefinite):
        oracle_scores(y, X, beta, -np.eye(10))


def test_oracle_whitened_variance():
    rng = np.random.default_rng(30)
    X, loc = _design(rng, 2000)
    beta = np.array([1.0, 0.5, -0.3])
    y = sample_synthetic(X, loc, TRUE, beta, seed=31)
    sc = fit_oracle(X, y, loc, TRUE, beta)
    assert 0.9 <= np.var(sc.whitened) <= 1.1


def test_oracle_scores_ks():
    passes = 0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        X, loc = _design(rng, 400)
        beta = np.array([1.0, 0.5, -0.3])
        y = sample_synthetic(X, loc, TRUE, beta, seed=seed)
        s = fit_oracle(X, y, loc, TRUE, beta).scores
        passes += stats.kstest(s, stats.halfnorm.cdf).pvalue >= 0.01
    assert passes >= 9


def test_oracle_test_score_continues_whitening(rng):
    """Scoring a new point equals whitening it as the next element of the sequence."""
    X, loc = _design(rng, 21)
    beta = np.array([1.0, 0.5, -0.3])
    y = sample_synthetic(X, loc, TRUE, beta, seed=6)
    sc = fit_oracle(X[:20], y[:20], loc[:20], TRUE, beta)
    full = oracle_scores(y, X, beta, build_covariance(loc, TRUE))
    assert oracle_test_score(y[20], X[20], loc[20], sc)[0] == pytest.approx(full[20], rel=1e-10)
    np.testing.assert_allclose(sc.scores, full[:20], rtol=1e-12)


def test_oracle_conditional_moments_dense(rng):
    X, loc = _design(rng, 12)
    beta = np.array([1.0, 0.5, -0.3])
    y = sample_synthetic(X, loc, TRUE, beta, seed=7)
    sc = fit_oracle(X, y, loc, TRUE, beta)
    Xn, ln = _design(rng, 3)
    mean, sd = sc.conditional_moments(Xn, ln)
    S = build_covariance(loc, TRUE).matrix
    Si = np.linalg.inv(S)
    d = np.sqrt(((loc[:, None] - ln[None]) ** 2).sum(-1))
    C = 0.2 * np.exp(-4 * d)
    np.testing.assert_allclose(mean, Xn @ beta + C.T @ Si @ (y - X @ beta), rtol=1e-10)
    np.testing.assert_allclose(sd ** 2, 0.5 - np.einsum("ij,ik,kj->j", C, Si, C), rtol=1e-10)


def test_gls_predictions_are_batch_invariant(rng):
    X, loc = _design(rng, 80)
    y = sample_synthetic(X, loc, TRUE, [1, 0, 0], seed=2)
    m = fit_gls(X, y, loc, TRUE)
    Xn, ln = _design(rng, 37)
    full = m.predict(Xn, ln)
    idx = np.array([3, 4, 20, 36])
    assert np.array_equal(m.predict(Xn[idx], ln[idx]), full[idx])
