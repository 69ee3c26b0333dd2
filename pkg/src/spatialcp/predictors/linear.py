"""Ordinary least squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ..exceptions import DimensionMismatch, RankDeficient, TooFewSamples


def rowwise_dot(X, v):
    """``X @ v`` accumulated column by column in a fixed order.

    Unlike a BLAS matrix-vector product, each row's result does not depend on
    which other rows are in the batch, so predicting a subset reproduces the
    full-batch values bit for bit.
    """
    X = np.asarray(X, dtype=float)
    out = np.zeros(X.shape[0])
    for j, c in enumerate(np.asarray(v, dtype=float)):
        out += X[:, j] * c
    return out


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coef: np.ndarray

    @property
    def coefficients(self):
        """All ``p + 1`` coefficients, intercept first."""
        return np.concatenate([[self.intercept], self.coef])

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.coef):
            raise DimensionMismatch(f"expected {len(self.coef)} columns, got {X.shape[1]}")
        return self.intercept + rowwise_dot(X, self.coef)

    def to_dict(self):
        return {"kind": "linear", "intercept": float(self.intercept), "coef": self.coef.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["intercept"]), np.asarray(d["coef"], dtype=float))


def solve_least_squares(Z, y, ridge_fallback=True):
    """Least-squares coefficients for a full design ``Z`` (intercept included).

    A rank-deficient ``Z`` gets a tiny ridge, ``1e-8 * trace(Z'Z) / p``, on the
    normal equations; with ``ridge_fallback=False`` it raises instead.
    """
    beta, _, rank, _ = np.linalg.lstsq(Z, y, rcond=None)
    if rank == Z.shape[1]:
        return beta
    if not ridge_fallback:
        raise RankDeficient(f"design has rank {rank} < {Z.shape[1]}")
    G = Z.T @ Z
    G[np.diag_indices_from(G)] += 1e-8 * np.trace(G) / G.shape[0]
    return linalg.cho_solve(linalg.cho_factor(G), Z.T @ y)


def fit_ols(X, y, ridge_fallback=True):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(X) != len(y):
        raise DimensionMismatch("X and y lengths differ")
    if len(y) <= X.shape[1] + 1:
        raise TooFewSamples(f"need more than {X.shape[1] + 1} rows, got {len(y)}")
    Z = np.column_stack([np.ones(len(X)), X])
    beta = solve_least_squares(Z, y, ridge_fallback)
    return LinearModel(float(beta[0]), beta[1:].copy())
