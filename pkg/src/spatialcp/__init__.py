"""Weighted split conformal prediction for spatially indexed regression."""

from .conformal import (
    CalibrationRecords,
    PredictionSet,
    PredictionSets,
    ScoreConfig,
    WeightScheme,
    compute_scores,
    conformal_predict,
    weighted_quantile,
    weighted_quantiles,
    weights_for,
)
from .dataset import HousingData, load_housing, load_transactions, three_way_split
from .evaluation import BetaBinomialRef, accuracy_metrics, beta_binomial_quantile, coverage_report, district_report
from .spatial import SpatialParams, fit_gls, fit_mle, sample_synthetic

__version__ = "0.1.0"
