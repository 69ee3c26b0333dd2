"""Gaussian spatial regression with exponential covariance.

The response is modelled as ``y ~ N(X beta, Sigma)`` with

    Sigma_ij = sigma2 * exp(-rho * d_ij) + sigma_eps2 * [i == j]

where ``d_ij`` is the planar distance in km.  ``nugget_mode="everywhere"``
instead adds ``sigma_eps2`` to every entry.  All solves go through Cholesky
factors; no explicit inverse is ever formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist

from .exceptions import DataError, DimensionMismatch, NonFiniteObjective, NotPositiveDefinite, TooFewSamples
from .predictors.linear import rowwise_dot

NUGGET_MODES = ("diagonal", "everywhere")


@dataclass(frozen=True)
class SpatialParams:
    sigma_eps2: float
    sigma2: float
    rho: float

    def __post_init__(self):
        vals = (self.sigma_eps2, self.sigma2, self.rho)
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"non-finite spatial parameters {vals}")
        if self.sigma_eps2 < 0 or self.sigma2 < 0 or self.rho <= 0:
            raise DataError(f"need sigma_eps2 >= 0, sigma2 >= 0, rho > 0; got {vals}")

    @property
    def total_variance(self):
        return self.sigma_eps2 + self.sigma2

    def half_distance(self):
        """Distance (km) at which the spatial covariance term halves."""
        return math.log(2.0) / self.rho

    def to_dict(self):
        return {"sigma_eps2": self.sigma_eps2, "sigma2": self.sigma2, "rho": self.rho}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["sigma_eps2"]), float(d["sigma2"]), float(d["rho"]))

    def to_log(self):
        with np.errstate(divide="ignore"):
            return np.log([self.sigma_eps2, self.sigma2, self.rho])

    @classmethod
    def from_log(cls, theta):
        return cls(*(float(v) for v in np.exp(theta)))


@dataclass(frozen=True)
class CovarianceMatrix:
    matrix: np.ndarray
    chol: np.ndarray  # lower triangular

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def whiten(self, v):
        """``L^{-1} v`` for a vector or matrix ``v``."""
        return linalg.solve_triangular(self.chol, v, lower=True, check_finite=False)

    def solve(self, v):
        return linalg.cho_solve((self.chol, True), v, check_finite=False)


def covariance_kernel(d, params, nugget_mode="diagonal", same_point=None):
    """Covariance as a function of distance.

    ``same_point`` marks entries that refer to the same observation (the
    diagonal); in diagonal mode only those get the nugget.
    """
    k = params.sigma2 * np.exp(-params.rho * np.asarray(d, dtype=float))
    if nugget_mode == "everywhere":
        return k + params.sigma_eps2
    if nugget_mode != "diagonal":
        raise ValueError(f"unknown nugget_mode {nugget_mode!r}")
    if same_point is not None:
        k = k + params.sigma_eps2 * same_point
    return k


def cross_covariance(loc_a, loc_b, params, nugget_mode="diagonal"):
    """Covariance between distinct observations at two sets of locations."""
    d = cdist(np.reshape(loc_a, (-1, 2)), np.reshape(loc_b, (-1, 2)))
    return covariance_kernel(d, params, nugget_mode)


def build_covariance(locations, params, nugget_mode="diagonal"):
    locations = np.reshape(np.asarray(locations, dtype=float), (-1, 2))
    d = cdist(locations, locations)
    sigma = covariance_kernel(d, params, nugget_mode, same_point=np.eye(len(locations)))
    # cdist is symmetric up to rounding; enforce exact symmetry
    sigma = 0.5 * (sigma + sigma.T)
    try:
        chol = linalg.cholesky(sigma, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise NotPositiveDefinite(f"covariance not positive definite for {params}") from None
    # pivots at rounding level mean the matrix is singular in exact arithmetic
    tiny = len(sigma) * np.finfo(float).eps * max(float(np.max(np.diag(sigma))), 0.0)
    if not np.all(np.isfinite(chol)) or np.any(np.diag(chol) ** 2 <= tiny):
        raise NotPositiveDefinite(f"covariance not positive definite for {params}")
    return CovarianceMatrix(sigma, chol)


def _check_xy(X, y, locations):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    locations = np.reshape(np.asarray(locations, dtype=float), (-1, 2))
    if not (len(X) == len(y) == len(locations)):
        raise DimensionMismatch("X, y and locations must have the same number of rows")
    return X, y, locations


def _profile(cov, X, y):
    Xw = cov.whiten(X)
    yw = cov.whiten(y)
    beta = np.linalg.lstsq(Xw, yw, rcond=None)[0]
    r = yw - Xw @ beta
    n = len(y)
    ll = -0.5 * (n * math.log(2 * math.pi) + cov.logdet() + float(r @ r))
    return ll, beta


def log_likelihood(params, X, y, locations, nugget_mode="diagonal", return_beta=False):
    """Gaussian log-likelihood with the GLS coefficients profiled out."""
    X, y, locations = _check_xy(X, y, locations)
    ll, beta = _profile(build_covariance(locations, params, nugget_mode), X, y)
    return (ll, beta) if return_beta else ll


def gls_coefficients(X, y, cov):
    """``(X' S^-1 X)^-1 X' S^-1 y`` via whitening."""
    return np.linalg.lstsq(cov.whiten(X), cov.whiten(y), rcond=None)[0]


@dataclass(frozen=True)
class MLEResult:
    params: SpatialParams
    beta: np.ndarray
    log_likelihood: float
    init_log_likelihood: float
    n_iter: int
    converged: bool


def fit_mle(X, y, locations, init, nugget_mode="diagonal", maxiter=500, tol=1e-6,
            step=0.5, full_output=False):
    """Maximum-likelihood ``(sigma_eps2, sigma2, rho)`` by Nelder-Mead in log space.

    The simplex starts at ``log(init)`` plus ``step`` along each axis and stops
    when all vertices are within ``tol`` of the best one (or after ``maxiter``
    iterations).  Returns ``(params, beta)``, or an :class:`MLEResult` when
    ``full_output`` is set.
    """
    X, y, locations = _check_xy(X, y, locations)
    if len(y) < X.shape[1] + 3:
        raise TooFewSamples(f"need at least {X.shape[1] + 3} rows, got {len(y)}")
    d = cdist(locations, locations)
    eye = np.eye(len(y))

    def loglik(theta):
        p = SpatialParams.from_log(theta)
        sigma = covariance_kernel(d, p, nugget_mode, same_point=eye)
        try:
            chol = linalg.cholesky(sigma, lower=True, check_finite=False)
        except linalg.LinAlgError:
            raise NotPositiveDefinite(str(p)) from None
        return _profile(CovarianceMatrix(sigma, chol), X, y)

    theta0 = np.log([init.sigma_eps2, init.sigma2, init.rho])
    if not np.all(np.isfinite(theta0)):
        raise NotPositiveDefinite(f"init parameters must be strictly positive: {init}")
    ll0, _ = loglik(theta0)
    if not math.isfinite(ll0):
        raise NonFiniteObjective(f"log-likelihood at init is {ll0}")

    def objective(theta):
        if np.any(np.abs(theta) > 50):
            return np.inf
        try:
            ll, _ = loglik(theta)
        except NotPositiveDefinite:
            return np.inf
        return -ll if math.isfinite(ll) else np.inf

    simplex = np.vstack([theta0, theta0 + step * np.eye(3)])
    res = optimize.minimize(
        objective, theta0, method="Nelder-Mead",
        options={"initial_simplex": simplex, "xatol": tol, "fatol": np.inf, "maxiter": maxiter},
    )
    theta = res.x if res.fun <= -ll0 else theta0
    ll, beta = loglik(theta)
    params = SpatialParams.from_log(theta)
    if full_output:
        return MLEResult(params, beta, ll, ll0, int(res.nit), bool(res.success))
    return params, beta


def sample_synthetic(X, locations, params, beta, seed, nugget_mode="diagonal"):
    """One draw of ``y ~ N(X beta, Sigma)`` as ``X beta + L z``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cov = build_covariance(locations, params, nugget_mode)
    z = np.random.default_rng(seed).standard_normal(len(X))
    return X @ np.asarray(beta, dtype=float) + cov.chol @ z


@dataclass(frozen=True)
class GLSModel:
    beta: np.ndarray
    params: SpatialParams
    locations: np.ndarray
    residuals: np.ndarray
    cov: CovarianceMatrix
    nugget_mode: str = "diagonal"

    def predict(self, X_new, locations_new, mode="kriging"):
        return predict_gls(self, X_new, locations_new, mode)

    def to_dict(self):
        return {
            "kind": "gls",
            "beta": self.beta.tolist(),
            "params": self.params.to_dict(),
            "locations": self.locations.tolist(),
            "residuals": self.residuals.tolist(),
            "nugget_mode": self.nugget_mode,
        }

    @classmethod
    def from_dict(cls, d):
        params = SpatialParams.from_dict(d["params"])
        locations = np.asarray(d["locations"], dtype=float).reshape(-1, 2)
        mode = d.get("nugget_mode", "diagonal")
        return cls(np.asarray(d["beta"], dtype=float), params, locations,
                   np.asarray(d["residuals"], dtype=float),
                   build_covariance(locations, params, mode), mode)


def fit_gls(X, y, locations, params, nugget_mode="diagonal"):
    X, y, locations = _check_xy(X, y, locations)
    cov = build_covariance(locations, params, nugget_mode)
    beta = gls_coefficients(X, y, cov)
    return GLSModel(beta, params, locations.copy(), y - X @ beta, cov, nugget_mode)


def predict_gls(model, X_new, locations_new, mode="kriging"):
    """GLS mean, plus the simple-kriging residual correction in ``kriging`` mode.

    The train-to-new covariance uses the spatial term only (no nugget).
    """
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    if X_new.shape[1] != len(model.beta):
        raise DimensionMismatch(f"expected {len(model.beta)} columns, got {X_new.shape[1]}")
    mean = rowwise_dot(X_new, model.beta)
    if mode == "mean_only":
        return mean
    if mode != "kriging":
        raise ValueError(f"unknown mode {mode!r}")
    d = cdist(model.locations, np.reshape(locations_new, (-1, 2)))
    c_star = model.params.sigma2 * np.exp(-model.params.rho * d)
    return mean + rowwise_dot(c_star.T, model.cov.solve(model.residuals))


def oracle_scores(y_calib, X_calib, beta, sigma_calib):
    """Absolute whitened residuals ``|L^{-1}(y - X beta)|``.

    ``sigma_calib`` is a :class:`CovarianceMatrix` or a dense positive
    definite array.
    """
    if not isinstance(sigma_calib, CovarianceMatrix):
        m = np.asarray(sigma_calib, dtype=float)
        try:
            sigma_calib = CovarianceMatrix(m, linalg.cholesky(m, lower=True))
        except linalg.LinAlgError:
            raise NotPositiveDefinite("calibration covariance not positive definite") from None
    r = np.asarray(y_calib, dtype=float) - np.atleast_2d(X_calib) @ np.asarray(beta, dtype=float)
    return np.abs(sigma_calib.whiten(r))


@dataclass(frozen=True)
class OracleScorer:
    """Whitening score for the calibration block and conditional standardization for new points.

    Calibration score ``i`` is ``|y_i - E[y_i | y_1..y_{i-1}]| / sd`` (the
    Cholesky whitening); a new point is standardized by its kriging mean and
    standard deviation given all calibration responses, i.e. it is scored as
    the next element of the same whitening sequence.
    """

    beta: np.ndarray
    params: SpatialParams
    locations: np.ndarray
    cov: CovarianceMatrix
    whitened: np.ndarray  # signed L^{-1}(y - X beta)
    nugget_mode: str = "diagonal"

    @property
    def scores(self):
        return np.abs(self.whitened)

    def conditional_moments(self, X_new, locations_new):
        X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
        C = cross_covariance(self.locations, locations_new, self.params, self.nugget_mode)
        V = self.cov.whiten(C)
        mean = rowwise_dot(X_new, self.beta) + rowwise_dot(V.T, self.whitened)
        var = self.params.total_variance - np.sum(V * V, axis=0)
        return mean, np.sqrt(np.maximum(var, 1e-300))

    def test_score(self, y_candidate, X_new, locations_new):
        mean, sd = self.conditional_moments(X_new, locations_new)
        return np.abs(np.asarray(y_candidate, dtype=float) - mean) / sd


def fit_oracle(X_calib, y_calib, locations_calib, params, beta, nugget_mode="diagonal"):
    X, y, loc = _check_xy(X_calib, y_calib, locations_calib)
    cov = build_covariance(loc, params, nugget_mode)
    beta = np.asarray(beta, dtype=float)
    return OracleScorer(beta, params, loc.copy(), cov, cov.whiten(y - X @ beta), nugget_mode)


def oracle_test_score(y_candidate, x_new, location_new, scorer):
    return scorer.test_score(y_candidate, x_new, location_new)
