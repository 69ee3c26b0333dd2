"""Simulation study: data generation, model fitting and the CP grid."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .. import dataset as ds
from .. import spatial
from ..conformal import (
    ScoreConfig,
    WeightScheme,
    compute_scores,
    conformal_predict,
    weight_matrix,
)
from ..evaluation import BetaBinomialRef, accuracy_metrics, coverage_band, coverage_report, district_report
from ..exceptions import DataError, SpatialCPError
from ..predictors import (
    add_intercept,
    fit_difficulty,
    fit_gbt,
    fit_ols,
    fit_qrf,
    fit_random_forest,
    linear_design,
    linear_design_names,
    tree_design,
)
from ..predictors.linear import solve_least_squares

log = logging.getLogger(__name__)

SCHEME_KIND = {"CP": "uniform", "MCP": "mondrian", "SCP": "spatial_gaussian",
               "NNCP": "nearest_neighbor", "FWCP": "feature_rf"}
DIFFICULTY = {"normalized1": "prediction_itself", "normalized2": "district_mean",
              "normalized3": "linear_on_features"}

# Placeholder DGP coefficients for fully synthetic runs (price in million NOK).
_PLACEHOLDER = {
    "intercept": 0.9, "size": 0.045, "gross_size": 0.005, "altitude": 0.002, "bedrooms": -0.1,
    "floor": 0.03, "age": -0.002, "coast_distance": -5e-5, "lake_distance": 0.0, "balcony": 0.1,
    "elevator": 0.2, "units_on_address": -0.001, "homes_nearby": 1e-4,
    "other_buildings_nearby": 0.0, "x_km": 0.0, "y_km": 0.0,
}


def dgp_design(data):
    return add_intercept(linear_design(data))


def dgp_names(data):
    return ["intercept"] + linear_design_names(data)


def placeholder_beta(data):
    names = dgp_names(data)
    districts = [n for n in names if n.startswith("district_")]
    effects = dict(zip(districts, np.linspace(-0.8, 1.0, len(districts))))
    return np.array([_PLACEHOLDER.get(n, effects.get(n, 0.0)) for n in names])


# -- simulate / fit-mle ------------------------------------------------------

def _base_dwellings(cfg):
    if cfg.csv:
        data = ds.load_housing(cfg.csv)
        if cfg.n < len(data):
            idx = np.sort(np.random.default_rng(cfg.feature_seed).choice(len(data), cfg.n, replace=False))
            data = data.subset(idx)
        return data
    return ds.synthetic_dwellings(cfg.n, seed=cfg.feature_seed)


def _dgp(cfg, data):
    """Covariance parameters and coefficients of the generating model."""
    if cfg.params_file:
        meta = json.loads(Path(cfg.params_file).read_text())
        params = spatial.SpatialParams.from_dict(meta["params"])
        beta = np.asarray(meta["beta"], dtype=float)
        if len(beta) != len(dgp_names(data)):
            raise DataError("params_file beta does not match the design of the data")
        return params, beta
    if cfg.csv:
        X = dgp_design(data)
        return cfg.params, solve_least_squares(X, data.y)
    return cfg.params, placeholder_beta(data)


def simulate(cfg):
    """Write one synthetic CSV (plus JSON sidecar) per seed; returns the CSV paths."""
    data = _base_dwellings(cfg)
    params, beta = _dgp(cfg, data)
    X = dgp_design(data)
    # fail on degenerate parameters before anything is written
    cov = spatial.build_covariance(data.locations, params, cfg.nugget_mode)
    out = cfg.data_path
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    mean = X @ beta
    for seed in range(cfg.seeds):
        z = np.random.default_rng(seed).standard_normal(len(data))
        sim = data.with_response(mean + cov.chol @ z)
        path = out / f"sim_seed{seed:03d}.csv"
        ds.write_housing_csv(sim, path)
        sidecar = {"seed": seed, "n": len(sim), "params": params.to_dict(), "beta": beta.tolist(),
                   "beta_columns": dgp_names(data), "nugget_mode": cfg.nugget_mode,
                   "feature_seed": cfg.feature_seed}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")
        paths.append(path)
    return paths


def fit_mle_cmd(cfg):
    """MLE of the spatial parameters on a real-schema CSV; writes ``mle.json``."""
    if not cfg.csv:
        raise DataError("fit-mle needs data.csv")
    data = _base_dwellings(cfg)
    X = dgp_design(data)
    init = spatial.SpatialParams.from_dict(cfg.mle["init"])
    res = spatial.fit_mle(X, data.y, data.locations, init, cfg.nugget_mode,
                          maxiter=int(cfg.mle.get("maxiter", 500)), full_output=True)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"params": res.params.to_dict(), "beta": res.beta.tolist(), "beta_columns": dgp_names(data),
           "log_likelihood": res.log_likelihood, "n_iter": res.n_iter, "converged": res.converged,
           "n": len(data), "nugget_mode": cfg.nugget_mode,
           "half_distance_km": res.params.half_distance()}
    (out / "mle.json").write_text(json.dumps(doc, indent=2) + "\n")
    return doc


# -- fitted models -----------------------------------------------------------

@dataclass
class FittedModel:
    """A point model together with the design it was trained on."""

    name: str
    model: object
    design: callable
    train_pred: np.ndarray

    def __call__(self, data):
        if self.name == "spatial":
            return self.model.predict(self.design(data), data.locations)
        return self.model.predict(self.design(data))


class _Memo:
    """Caches a callable's output per split (keyed by object identity)."""

    def __init__(self, fn):
        self.fn = fn
        self._cache = {}

    def __call__(self, data, *args):
        key = (id(data),) + tuple(args)
        if key not in self._cache:
            self._cache[key] = self.fn(data, *args)
        return self._cache[key]


def defined_scores(cfg, model):
    """Score kinds that form a grid cell with ``model``."""
    return [s for s in cfg.scores
            if (s != "cqr" or model == "random_forest") and (s != "oracle" or model == "spatial")]


_CELL_ERRORS = (SpatialCPError, ValueError, ArithmeticError)


class _CellFailure(Exception):
    """Carries the error name of a cell whose setup already failed."""


def fit_models(cfg, train, seed):
    """Fit every configured model; returns ``(models, failures)``.

    A model that cannot be fitted is reported in ``failures`` (name -> error
    class name) so its cells can be tagged instead of aborting the run.
    """
    models, failures = {}, {}
    for name in cfg.models:
        try:
            models[name] = _fit_model(cfg, name, train, seed)
        except _CELL_ERRORS as exc:
            log.warning("seed %d: %s failed: %s", seed, name, exc)
            failures[name] = type(exc).__name__
    return models, failures


def _fit_model(cfg, name, train, seed):
    if name == "linear":
        design = linear_design
        model = fit_ols(design(train), train.y)
    elif name == "random_forest":
        design = tree_design
        model = fit_random_forest(design(train), train.y, seed=seed, **_rf_kwargs(cfg.rf))
    elif name == "gradient_boosting":
        design = tree_design
        model = fit_gbt(design(train), train.y, seed=seed, **cfg.gbt)
    else:
        design = dgp_design
        init = spatial.SpatialParams.from_dict(cfg.mle["init"])
        params, _ = spatial.fit_mle(design(train), train.y, train.locations, init, cfg.nugget_mode,
                                    maxiter=int(cfg.mle.get("maxiter", 500)))
        model = spatial.fit_gls(design(train), train.y, train.locations, params, cfg.nugget_mode)
    fm = FittedModel(name, model, design, None)
    fm.train_pred = fm(train)
    return fm


def _rf_kwargs(d):
    return {k: v for k, v in d.items() if v is not None}


class _OracleAdapter:
    def __init__(self, gls, calib):
        X = dgp_design(calib)
        self.scorer = spatial.fit_oracle(X, calib.y, calib.locations, gls.params, gls.beta, gls.nugget_mode)
        self.calib = calib

    def calibration_scores(self, data):
        return self.scorer.scores

    def conditional_moments(self, data):
        return self.scorer.conditional_moments(dgp_design(data), data.locations)


def score_configs(cfg, models, train, calib, seed):
    """All defined (model, score) cells as ``{(model, score): ScoreConfig}``.

    A cell whose auxiliary model cannot be fitted maps to the error class name.
    """
    cells = {}
    for mname, fm in models.items():
        pred = _Memo(fm)
        for sname in defined_scores(cfg, mname):
            try:
                cells[mname, sname] = _score_config(cfg, sname, mname, fm, pred, train, calib, seed)
            except _CELL_ERRORS as exc:
                cells[mname, sname] = type(exc).__name__
    return cells


def _score_config(cfg, sname, mname, fm, pred, train, calib, seed):
    if sname == "standard":
        return ScoreConfig("standard", predictor=pred, alpha=cfg.alpha)
    if sname in DIFFICULTY:
        dm = fit_difficulty(DIFFICULTY[sname], y=train.y, districts=train.districts,
                            X=linear_design(train), prediction=fm.train_pred)
        diff = (lambda data, f, dm=dm:
                dm.evaluate(prediction=f, districts=data.districts, X=linear_design(data)))
        return ScoreConfig("normalized", predictor=pred, difficulty=diff, alpha=cfg.alpha,
                           variant=int(sname[-1]))
    if sname == "cqr":
        qrf = fit_qrf(tree_design(train), train.y, seed=seed, **_rf_kwargs(cfg.qrf))
        quant = _Memo(lambda data, taus, qrf=qrf: qrf.predict_quantile(tree_design(data), list(taus)))
        return ScoreConfig("cqr", quantiles=quant, alpha=cfg.alpha)
    return ScoreConfig("oracle", oracle=_OracleAdapter(fm.model, calib), alpha=cfg.alpha)


def weight_schemes(cfg, train, seed):
    """``{label: WeightScheme}``; a scheme whose proximity forest fails maps to the error name."""
    schemes = {}
    for label in cfg.schemes:
        kind = SCHEME_KIND[label]
        if kind == "feature_rf":
            design = lambda data: tree_design(data, coordinates=False)  # noqa: E731
            try:
                forest = fit_random_forest(design(train), train.y, seed=seed + 7919, **_rf_kwargs(cfg.fwcp))
            except _CELL_ERRORS as exc:
                schemes[label] = type(exc).__name__
                continue
            schemes[label] = WeightScheme(kind, forest=forest, design=design)
        else:
            schemes[label] = WeightScheme(kind, eta=cfg.eta, radius=cfg.radius)
    return schemes


# -- one replication -----------------------------------------------------------

CELL_COLUMNS = ["seed", "model", "score", "scheme", "coverage", "coverage_gap", "mean_width",
                "relative_efficiency", "n_infinite_sets", "n_empty_sets", "n_test",
                "district_gap_q1", "district_gap_q3", "district_gap_sd", "mean_ess", "error"]


def run_seed(cfg, path, seed):
    """Fit everything on one dataset and evaluate every grid cell."""
    data = ds.load_housing(path)
    split = ds.three_way_split(len(data), cfg.fractions, seed=seed)
    train, calib, test = (data.subset(split.train), data.subset(split.calibration), data.subset(split.test))
    models, failures = fit_models(cfg, train, seed)
    acc = []
    pos = test.y > 0
    for name, fm in models.items():
        m = accuracy_metrics(fm(test)[pos], test.y[pos])
        acc.append({"seed": seed, "model": name, **m})
    cells = score_configs(cfg, models, train, calib, seed)
    schemes = weight_schemes(cfg, train, seed)
    weights = {label: weight_matrix(test, calib, sch) for label, sch in schemes.items()
               if not isinstance(sch, str)}

    def error_row(mname, sname, label, err):
        return {"seed": seed, "model": mname, "score": sname, "scheme": label, "error": err}

    rows, dist_rows, pred_rows = [], [], []
    for mname, err in failures.items():
        rows += [error_row(mname, sname, label, err)
                 for sname in defined_scores(cfg, mname) for label in schemes]
    for (mname, sname), scfg in cells.items():
        try:
            if isinstance(scfg, str):
                raise _CellFailure(scfg)
            records = compute_scores(scfg, calib)
        except _CellFailure as exc:
            rows += [error_row(mname, sname, label, str(exc)) for label in schemes]
            continue
        except _CELL_ERRORS as exc:
            rows += [error_row(mname, sname, label, type(exc).__name__) for label in schemes]
            continue
        for label, sch in schemes.items():
            if isinstance(sch, str):
                rows.append(error_row(mname, sname, label, sch))
                continue
            try:
                sets = conformal_predict(scfg, records, test, sch, cfg.alpha, weights=weights[label])
                rep = coverage_report(sets, test.y, cfg.alpha, strict=False)
                drep = district_report(sets, test.y, test.districts, cfg.alpha)
            except _CELL_ERRORS as exc:
                rows.append(error_row(mname, sname, label, type(exc).__name__))
                continue
            rows.append({
                "seed": seed, "model": mname, "score": sname, "scheme": label,
                "coverage": rep.coverage, "coverage_gap": rep.coverage_gap,
                "mean_width": rep.mean_width, "relative_efficiency": rep.relative_efficiency,
                "n_infinite_sets": rep.n_infinite_sets, "n_empty_sets": rep.n_empty_sets,
                "n_test": rep.n_test, "district_gap_q1": drep.gap_quartiles[0],
                "district_gap_q3": drep.gap_quartiles[1],
                "district_gap_sd": float(np.std(drep.coverage_gap)),
                "mean_ess": float(np.mean(sets.effective_sample_size)), "error": "",
            })
            for r in drep.rows():
                dist_rows.append({"seed": seed, "model": mname, "score": sname, "scheme": label, **r})
            if cfg.write_predictions:
                pred_rows.append(prediction_frame(sets, test, label, sname, mname))
    preds = pd.concat(pred_rows, ignore_index=True) if pred_rows else None
    return rows, dist_rows, acc, preds, {"n_calib": len(calib), "n_test": len(test)}


PREDICTION_COLUMNS = ["test_id", "lower", "upper", "width", "covered", "district",
                      "effective_sample_size", "scheme", "score_kind", "model"]


def prediction_frame(sets, test, scheme, score_kind, model):
    return pd.DataFrame({
        "test_id": np.arange(len(sets)), "lower": sets.lower, "upper": sets.upper,
        "width": sets.width, "covered": sets.covers(test.y).astype(int), "district": test.districts,
        "effective_sample_size": sets.effective_sample_size, "scheme": scheme,
        "score_kind": score_kind, "model": model,
    })[PREDICTION_COLUMNS]


# -- whole grid ---------------------------------------------------------------

def _data_files(cfg):
    if cfg.source == "csv":
        return [Path(cfg.csv)] * cfg.seeds
    files = sorted(cfg.data_path.glob("sim_seed*.csv"))[:cfg.seeds]
    if len(files) < cfg.seeds:
        log.info("simulating %d datasets into %s", cfg.seeds, cfg.data_path)
        files = simulate(cfg)
    return files


def _sort_key(order):
    return {v: i for i, v in enumerate(order)}


def run(cfg):
    """Run the full grid; writes cells.csv, summary.csv, accuracy.csv, district_gaps.csv."""
    files = _data_files(cfg)
    results = Parallel(n_jobs=cfg.threads)(
        delayed(run_seed)(cfg, path, seed) for seed, path in enumerate(files)
    )
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [r for res in results for r in res[0]]
    dist = [r for res in results for r in res[1]]
    acc = [r for res in results for r in res[2]]
    sizes = results[0][4]

    mk, sk, hk = _sort_key(cfg.models), _sort_key(cfg.scores), _sort_key(cfg.schemes)
    cells = pd.DataFrame(rows).reindex(columns=CELL_COLUMNS)
    cells["error"] = cells["error"].fillna("")
    keys = [(r.seed, mk[r.model], sk[r.score], hk[r.scheme]) for r in cells.itertuples()]
    cells = cells.iloc[sorted(range(len(cells)), key=keys.__getitem__)].reset_index(drop=True)
    cells.to_csv(out / "cells.csv", index=False)

    summary = summarize(cells, cfg)
    summary.to_csv(out / "summary.csv", index=False)
    pd.DataFrame(dist).to_csv(out / "district_gaps.csv", index=False)
    pd.DataFrame(acc).to_csv(out / "accuracy.csv", index=False)
    if cfg.write_predictions:
        for seed, res in enumerate(results):
            if res[3] is not None:
                res[3].to_csv(out / f"predictions_seed{seed:03d}.csv", index=False)

    ref = BetaBinomialRef(sizes["n_calib"], sizes["n_test"], cfg.alpha)
    lo, hi = coverage_band(ref)
    meta = {"config": cfg.to_dict(), **sizes, "alpha": cfg.alpha, "n_seeds": len(files),
            "beta_binomial": {"l": ref.l, "a": ref.beta_params[0], "b": ref.beta_params[1],
                              "coverage_q05": lo, "coverage_q95": hi}}
    (out / "run.json").write_text(json.dumps(meta, indent=2, default=str) + "\n")
    return summary


SUMMARY_COLUMNS = ["model", "score", "scheme", "n_seeds", "n_errors", "coverage", "coverage_gap",
                   "mean_width", "relative_efficiency", "n_infinite_sets", "district_gap_q1",
                   "district_gap_q3", "district_gap_sd"]


def summarize(cells, cfg):
    """Seed averages per (model, score, scheme), in canonical order."""
    out = []
    ok = cells[cells["error"] == ""]
    for m in cfg.models:
        for s in cfg.scores:
            for h in cfg.schemes:
                sel = cells[(cells["model"] == m) & (cells["score"] == s) & (cells["scheme"] == h)]
                if sel.empty:
                    continue
                good = ok.loc[ok.index.intersection(sel.index)]
                row = {"model": m, "score": s, "scheme": h, "n_seeds": len(good),
                       "n_errors": len(sel) - len(good)}
                for c in SUMMARY_COLUMNS[5:]:
                    row[c] = float(good[c].astype(float).mean()) if len(good) else float("nan")
                out.append(row)
    return pd.DataFrame(out, columns=SUMMARY_COLUMNS)

