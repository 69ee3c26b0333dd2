"""Point, quantile and difficulty models."""

from .design import add_intercept, linear_design, linear_design_names, tree_design
from .difficulty import DifficultyModel, evaluate_difficulty, fit_difficulty
from .linear import LinearModel, fit_ols, rowwise_dot, solve_least_squares
from .trees import (
    QuantileForest,
    Tree,
    TreeEnsemble,
    fit_gbt,
    fit_qrf,
    fit_random_forest,
    fit_tree,
    predict,
    predict_quantile,
    rf_proximity,
)

__all__ = [
    "DifficultyModel", "LinearModel", "QuantileForest", "Tree", "TreeEnsemble",
    "add_intercept", "evaluate_difficulty", "fit_difficulty", "fit_gbt", "fit_ols",
    "fit_qrf", "fit_random_forest", "fit_tree", "linear_design", "linear_design_names",
    "predict", "predict_quantile", "rf_proximity", "rowwise_dot", "solve_least_squares", "tree_design",
]
