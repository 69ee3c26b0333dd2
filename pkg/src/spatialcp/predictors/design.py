"""Design matrices for linear and tree models."""

from __future__ import annotations

import numpy as np

from ..dataset import COVARIATES

_NUMERIC = tuple(c for c in COVARIATES if c not in ("longitude", "latitude", "city_district"))


def linear_design(data, coordinates=True):
    """Numeric covariates, optional km coordinates, district indicators.

    Districts are expanded to indicator columns for every declared district
    except the first (the intercept, added by the linear fitters, absorbs it).
    No intercept column is included.
    """
    cols = [data.column(c) for c in _NUMERIC]
    if coordinates:
        cols += [data.locations[:, 0], data.locations[:, 1]]
    for d in data.district_ids[1:]:
        cols.append((data.districts == d).astype(float))
    return np.column_stack(cols)


def linear_design_names(data, coordinates=True):
    names = list(_NUMERIC)
    if coordinates:
        names += ["x_km", "y_km"]
    names += [f"district_{d}" for d in data.district_ids[1:]]
    return names


def tree_design(data, coordinates=True):
    """Covariates with the district as an (ordered) integer code.

    Longitude/latitude are replaced by km coordinates, or dropped when
    ``coordinates`` is False (the feature-only forest used for proximity
    weights).
    """
    cols = [data.column(c) for c in _NUMERIC]
    cols.append(data.districts.astype(float))
    if coordinates:
        cols += [data.locations[:, 0], data.locations[:, 1]]
    return np.column_stack(cols)


def add_intercept(X):
    X = np.asarray(X, dtype=float)
    return np.column_stack([np.ones(len(X)), X])
