"""Difficulty (normalizing) functions for normalized non-conformity scores."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import MissingAttachment
from .linear import fit_ols

DEFAULT_FLOOR = 1e-6
VARIANTS = ("prediction_itself", "district_mean", "linear_on_features")


@dataclass(frozen=True)
class DifficultyModel:
    variant: str
    floor: float = DEFAULT_FLOOR
    district_means: dict = field(default_factory=dict)
    global_mean: float = float("nan")
    residual_model: object = None

    def evaluate(self, *, prediction=None, districts=None, X=None):
        """Positive scale estimate for each instance.

        Which keyword is needed depends on the variant: the point prediction,
        the district ids, or the linear design matrix.
        """
        if self.variant == "prediction_itself":
            if prediction is None:
                raise MissingAttachment("prediction_itself needs the point prediction")
            raw = np.asarray(prediction, dtype=float)
        elif self.variant == "district_mean":
            if districts is None:
                raise MissingAttachment("district_mean needs district ids")
            # unseen districts fall back to the global training mean
            raw = np.array([self.district_means.get(int(d), self.global_mean)
                            for d in np.atleast_1d(districts)])
        else:
            if X is None:
                raise MissingAttachment("linear_on_features needs the design matrix")
            raw = self.residual_model.predict(X)
        return np.maximum(raw, self.floor)


def fit_difficulty(variant, *, y=None, districts=None, X=None, prediction=None, floor=DEFAULT_FLOOR):
    """Fit a difficulty model on the training split.

    ``prediction`` must be the fitted point model's training predictions for
    ``linear_on_features``, which regresses absolute residuals on ``X``.
    """
    if variant == "prediction_itself":
        return DifficultyModel(variant, floor)
    if variant == "district_mean":
        y = np.asarray(y, dtype=float)
        districts = np.asarray(districts)
        means = {int(d): float(y[districts == d].mean()) for d in np.unique(districts)}
        return DifficultyModel(variant, floor, district_means=means, global_mean=float(y.mean()))
    if variant == "linear_on_features":
        if prediction is None or X is None or y is None:
            raise MissingAttachment("linear_on_features needs X, y and training predictions")
        resid = np.abs(np.asarray(y, dtype=float) - np.asarray(prediction, dtype=float))
        return DifficultyModel(variant, floor, residual_model=fit_ols(X, resid))
    raise ValueError(f"unknown difficulty variant {variant!r}")


def evaluate_difficulty(model, **instance):
    return model.evaluate(**instance)
