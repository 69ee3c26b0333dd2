"""Weighted split conformal prediction.

Every calibration scheme is a weighted quantile of calibration scores:

* ``uniform``           all weights 1 (classic split CP)
* ``mondrian``          1 if same district as the test point, else 0
* ``spatial_gaussian``  ``exp(-d^2 / eta)`` with ``d`` in km
* ``nearest_neighbor``  1 if ``d < radius`` else 0
* ``feature_rf``        random-forest proximity in feature space

Weights are normalized as ``w_i / (sum(w) + 1)`` with the leftover mass on
``+inf`` (the test point's own unit weight), which reduces to the
``ceil((1 - alpha)(n + 1))``-th order statistic for unit weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import DimensionMismatch, EmptyScores, InvalidLevel, MissingAttachment
from .predictors.trees import rf_proximity

SCORE_KINDS = ("standard", "normalized", "cqr", "oracle")
SCHEME_KINDS = ("uniform", "mondrian", "spatial_gaussian", "nearest_neighbor", "feature_rf")

#: eta giving weight 1/2 at 0.8 km.
DEFAULT_ETA = 0.64 / math.log(2.0)
DEFAULT_RADIUS = 1.0


# -- weighted quantile -----------------------------------------------------

def _check_level(level):
    if not 0.0 < level < 1.0:
        raise InvalidLevel(f"level must lie in (0, 1), got {level}")


def weighted_quantiles(scores, weights, level, residual_mass=1.0):
    """Row-wise weighted conformal quantile.

    ``weights`` has shape ``(m, n)`` (one row per test point).  For each row
    returns the smallest score ``q`` with ``sum_{s_i <= q} w_i >= level *
    (sum(w) + residual_mass)``, or ``+inf`` when no score qualifies.
    """
    _check_level(level)
    scores = np.asarray(scores, dtype=float)
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    if scores.size == 0:
        raise EmptyScores("no calibration scores")
    if W.shape[1] != scores.size:
        raise DimensionMismatch(f"{W.shape[1]} weights for {scores.size} scores")
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    cum = np.cumsum(W[:, order], axis=1)
    # mass of all scores <= s[k] sits at the last index of each tie group
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    need = level * (cum[:, -1] + residual_mass)
    ok = cum[:, ends] >= need[:, None]
    hit = ok.any(axis=1)
    first = np.argmax(ok, axis=1)
    return np.where(hit, s[ends[first]], np.inf)


def weighted_quantile(scores, weights, level, residual_mass=1.0):
    """Weighted conformal quantile for a single test point (may be ``+inf``)."""
    return float(weighted_quantiles(scores, np.reshape(weights, (1, -1)), level, residual_mass)[0])


def conformal_quantile(scores, alpha):
    """Textbook split-CP quantile: the ``ceil((1-alpha)(n+1))``-th smallest score."""
    s = np.sort(np.asarray(scores, dtype=float))
    k = math.ceil((1 - alpha) * (len(s) + 1))
    return float(s[k - 1]) if k <= len(s) else math.inf


# -- scores ------------------------------------------------------------------

def standard_score(y, prediction):
    return np.abs(np.asarray(y, dtype=float) - prediction)


def normalized_score(y, prediction, sigma):
    return np.abs(np.asarray(y, dtype=float) - prediction) / sigma


def cqr_score(y, q_lo, q_hi):
    y = np.asarray(y, dtype=float)
    return np.maximum(np.asarray(q_lo) - y, y - np.asarray(q_hi))


@dataclass
class ScoreConfig:
    """A non-conformity score and the fitted models it needs.

    Attachments are callables on :class:`~spatialcp.dataset.HousingData`:

    * ``predictor(data) -> f_hat``                      (standard, normalized)
    * ``difficulty(data, f_hat) -> sigma_hat``         (normalized)
    * ``quantiles(data, (lo, hi)) -> (n, 2) array``    (cqr)
    * ``oracle`` exposes ``calibration_scores(data)`` and
      ``conditional_moments(data) -> (mean, sd)``       (oracle)
    """

    kind: str
    predictor: Callable | None = None
    difficulty: Callable | None = None
    quantiles: Callable | None = None
    oracle: object = None
    alpha: float = 0.1
    variant: int | None = None

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise ValueError(f"unknown score kind {self.kind!r}")
        needs = {
            "standard": ("predictor",),
            "normalized": ("predictor", "difficulty"),
            "cqr": ("quantiles",),
            "oracle": ("oracle",),
        }[self.kind]
        for name in needs:
            if getattr(self, name) is None:
                raise MissingAttachment(f"{self.kind} score needs {name!r}")

    @property
    def label(self):
        return f"normalized{self.variant}" if self.kind == "normalized" and self.variant else self.kind

    @property
    def quantile_levels(self):
        return (self.alpha / 2, 1 - self.alpha / 2)


@dataclass(frozen=True)
class CalibrationRecords:
    scores: np.ndarray
    data: object  # HousingData of the calibration split

    def __post_init__(self):
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("calibration scores must be finite")


def compute_scores(cfg, calib):
    """Score every calibration instance."""
    if cfg.kind == "standard":
        s = standard_score(calib.y, cfg.predictor(calib))
    elif cfg.kind == "normalized":
        f = cfg.predictor(calib)
        s = normalized_score(calib.y, f, cfg.difficulty(calib, f))
    elif cfg.kind == "cqr":
        q = cfg.quantiles(calib, cfg.quantile_levels)
        s = cqr_score(calib.y, q[:, 0], q[:, 1])
    else:
        s = np.asarray(cfg.oracle.calibration_scores(calib), dtype=float)
    return CalibrationRecords(np.asarray(s, dtype=float), calib)


def interval_parts(cfg, data):
    """``(lo, hi, scale)`` such that the set for quantile ``q`` is ``[lo - scale q, hi + scale q]``."""
    if cfg.kind == "standard":
        f = cfg.predictor(data)
        return f, f, np.ones_like(f)
    if cfg.kind == "normalized":
        f = cfg.predictor(data)
        return f, f, np.asarray(cfg.difficulty(data, f), dtype=float)
    if cfg.kind == "cqr":
        q = cfg.quantiles(data, cfg.quantile_levels)
        return q[:, 0], q[:, 1], np.ones(len(q))
    mean, sd = cfg.oracle.conditional_moments(data)
    return mean, mean, sd


# -- prediction sets -------------------------------------------------------

@dataclass(frozen=True)
class PredictionSet:
    lower: float
    upper: float

    @property
    def width(self):
        return self.upper - self.lower

    @property
    def bounded(self):
        return math.isfinite(self.lower) and math.isfinite(self.upper)

    def __contains__(self, y):
        return self.lower <= y <= self.upper


@dataclass(frozen=True)
class PredictionSets:
    """Intervals for a batch of test instances, plus per-instance diagnostics."""

    lower: np.ndarray
    upper: np.ndarray
    qhat: np.ndarray
    effective_sample_size: np.ndarray
    empty: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.lower)

    def __getitem__(self, i):
        return PredictionSet(float(self.lower[i]), float(self.upper[i]))

    @property
    def width(self):
        return self.upper - self.lower

    @property
    def infinite(self):
        return ~np.isfinite(self.qhat)

    def covers(self, y):
        y = np.asarray(y, dtype=float)
        return (self.lower <= y) & (y <= self.upper)


def build_intervals(lo, hi, scale, qhat):
    """Assemble intervals; infinite ``qhat`` gives the whole line.

    A negative ``qhat`` (CQR) can cross the bounds; such sets are collapsed to
    the empty-interval midpoint and flagged.
    """
    lo, hi, scale, qhat = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (lo, hi, scale, qhat)))
    inf = ~np.isfinite(qhat)
    with np.errstate(invalid="ignore"):
        lower = np.where(inf, -np.inf, lo - scale * qhat)
        upper = np.where(inf, np.inf, hi + scale * qhat)
        empty = upper < lower
        mid = 0.5 * (lower + upper)
    lower = np.where(empty, mid, lower)
    upper = np.where(empty, mid, upper)
    return lower, upper, empty


def build_interval(cfg=None, qhat=0.0, *, prediction=None, sigma=None, q_lo=None, q_hi=None,
                   mean=None, sd=None, kind=None):
    """Prediction set for one instance from already-evaluated model outputs."""
    kind = kind or cfg.kind
    if kind == "standard":
        parts = (prediction, prediction, 1.0)
    elif kind == "normalized":
        parts = (prediction, prediction, sigma)
    elif kind == "cqr":
        parts = (q_lo, q_hi, 1.0)
    elif kind == "oracle":
        parts = (mean, mean, sd)
    else:
        raise ValueError(f"unknown score kind {kind!r}")
    if any(p is None for p in parts):
        raise MissingAttachment(f"{kind} interval needs more model outputs")
    lower, upper, _ = build_intervals(*parts, qhat)
    return PredictionSet(float(lower), float(upper))


# -- weights ---------------------------------------------------------------

@dataclass(frozen=True)
class WeightScheme:
    kind: str
    eta: float = DEFAULT_ETA
    radius: float = DEFAULT_RADIUS
    forest: object = None
    design: Callable | None = None  # HousingData -> feature matrix for ``forest``

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ValueError(f"unknown weight scheme {self.kind!r}")
        if self.eta <= 0 or self.radius <= 0:
            raise ValueError("eta and radius must be positive")
        if self.kind == "feature_rf" and (self.forest is None or self.design is None):
            raise MissingAttachment("feature_rf needs a proximity forest and its design function")

    @property
    def label(self):
        return {"uniform": "CP", "mondrian": "MCP", "spatial_gaussian": "SCP",
                "nearest_neighbor": "NNCP", "feature_rf": "FWCP"}[self.kind]


def weight_matrix(test, calib, scheme):
    """Weights of every calibration instance for every test instance, ``(m, n)``."""
    m, n = len(test), len(calib)
    if scheme.kind == "uniform":
        return np.ones((m, n))
    if scheme.kind == "mondrian":
        return (np.asarray(test.districts)[:, None] == np.asarray(calib.districts)[None, :]).astype(float)
    if scheme.kind in ("spatial_gaussian", "nearest_neighbor"):
        diff = test.locations[:, None, :] - calib.locations[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        if scheme.kind == "spatial_gaussian":
            return np.exp(-d2 / scheme.eta)
        return (d2 < scheme.radius ** 2).astype(float)
    return rf_proximity(scheme.forest, scheme.design(test), scheme.design(calib))


def weights_for(test, records, scheme):
    """Weight vector (single test instance) or matrix (batch) over calibration records."""
    calib = records.data if isinstance(records, CalibrationRecords) else records
    W = weight_matrix(test, calib, scheme)
    return W[0] if len(test) == 1 else W


def effective_sample_size(W):
    W = np.atleast_2d(W)
    s1 = W.sum(axis=1)
    s2 = (W * W).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(s2 > 0, s1 * s1 / s2, 0.0)


def conformal_predict(cfg, records, test, scheme, alpha=0.1, weights=None, chunk=2048):
    """Weighted split-CP intervals for every instance of ``test``.

    ``weights`` may carry a precomputed ``(len(test), len(records))`` weight
    matrix for ``scheme``; scores from several models then share one matrix.
    """
    _check_level(1 - alpha)
    lo, hi, scale = interval_parts(cfg, test)
    m = len(test)
    qhat = np.empty(m)
    ess = np.empty(m)
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        if weights is not None:
            W = np.asarray(weights)[start:stop]
        else:
            W = weight_matrix(test.subset(np.arange(start, stop)), records.data, scheme)
        qhat[start:stop] = weighted_quantiles(records.scores, W, 1 - alpha)
        ess[start:stop] = effective_sample_size(W)
    lower, upper, empty = build_intervals(lo, hi, scale, qhat)
    return PredictionSets(lower, upper, qhat, ess, empty)
