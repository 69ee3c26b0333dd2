"""Acceptance criteria 1-12.

Each test records one ``PASS``/``FAIL`` line (echoed in the terminal summary
and printed with ``-s``) and then asserts, so a failing criterion stays red.
"""

import itertools
import math
import time
from fractions import Fraction

import numpy as np
import pandas as pd
import pytest
import yaml
from scipy import optimize

from spatialcp import dataset as ds
from spatialcp.cli.main import main
from spatialcp.cli.runner import dgp_design, placeholder_beta
from spatialcp.conformal import (
    DEFAULT_ETA,
    ScoreConfig,
    WeightScheme,
    compute_scores,
    conformal_predict,
    weight_matrix,
    weighted_quantile,
    weighted_quantiles,
)
from spatialcp.evaluation import (
    BetaBinomialRef,
    accuracy_metrics,
    beta_binomial_quantile,
    coverage_band,
    coverage_report,
    district_report,
)
from spatialcp.predictors import fit_ols, linear_design
from spatialcp.spatial import (
    SpatialParams,
    covariance_kernel,
    fit_gls,
    fit_mle,
    fit_oracle,
    predict_gls,
    sample_synthetic,
)

RESULTS = []


def verdict(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} [{number}] {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def _ols_cfg(model):
    return ScoreConfig("standard", predictor=lambda d: model.predict(linear_design(d)))


def _splits(data, seed):
    sp = ds.three_way_split(len(data), (1 / 3, 1 / 3, 1 / 3), seed=seed)
    return data.subset(sp.train), data.subset(sp.calibration), data.subset(sp.test)


# 1 -------------------------------------------------------------------------------


def _brute(scores, weights, level):
    lev = Fraction(str(level))
    total = sum(Fraction(w) for w in weights) + 1
    for q in sorted(set(scores)):
        if sum(Fraction(w) for w, s in zip(weights, scores) if s <= q) >= lev * total:
            return q
    return math.inf


def test_01_weighted_quantile_bruteforce():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    grid = (0.0, 0.25, 0.5, 1.0)
    levels = (0.05, 0.1, 0.2, 0.5, 0.8, 0.9, 0.95)
    cases = mismatches = 0
    # every weight pattern for n <= 4, random patterns beyond; scores with ties
    for n in range(1, 9):
        if n <= 4:
            patterns = np.array(list(itertools.product(grid, repeat=n)))
        else:
            patterns = rng.choice(grid, size=(300, n))
        for rep in range(3 if n <= 4 else 1):
            scores = rng.integers(0, max(2, n), size=n).astype(float)
            for level in levels:
                got = weighted_quantiles(scores, patterns, level)
                for w, g in zip(patterns, got):
                    cases += 1
                    mismatches += g != _brute(scores, w, level)
    elapsed = time.perf_counter() - t0
    verdict(1, "weighted quantile vs brute-force enumeration",
            cases >= 10_000 and mismatches == 0 and elapsed < 10,
            f"{cases} cases, {mismatches} mismatches, {elapsed:.1f}s")


# 2 -------------------------------------------------------------------------------


def test_02_split_cp_reduction():
    bad = []
    for n, alpha in itertools.product((9, 99, 1999), (0.05, 0.1, 0.2)):
        s = np.random.default_rng(n).normal(size=n)
        k = math.ceil((1 - Fraction(str(alpha))) * (n + 1))
        expected = np.sort(s)[k - 1] if k <= n else math.inf
        got = weighted_quantile(s, np.ones(n), 1 - alpha)
        batch = weighted_quantiles(s, np.ones((3, n)), 1 - alpha)
        if got != expected or np.any(batch != expected):
            bad.append((n, alpha))
    verdict(2, "unit weights reproduce the ceil((1-a)(n+1)) order statistic", not bad,
            f"9 (n, alpha) pairs, mismatches={bad}")


# 3 -------------------------------------------------------------------------------


def test_03_marginal_validity_iid():
    t0 = time.perf_counter()
    base = ds.synthetic_dwellings(6000, seed=0)
    X = dgp_design(base)
    mean = X @ placeholder_beta(base)
    band = coverage_band(BetaBinomialRef(2000, 2000, 0.1))
    covs = []
    for seed in range(50):
        # sigma2 = 0: the covariance is sigma_eps2 * I, i.e. iid Gaussian noise
        y = mean + math.sqrt(0.5) * np.random.default_rng(seed).standard_normal(len(mean))
        train, calib, test = _splits(base.with_response(y), seed)
        cfg = _ols_cfg(fit_ols(linear_design(train), train.y))
        sets = conformal_predict(cfg, compute_scores(cfg, calib), test, WeightScheme("uniform"), 0.1)
        covs.append(float(np.mean(sets.covers(test.y))))
    covs = np.array(covs)
    inside = int(np.sum((covs >= band[0]) & (covs <= band[1])))
    elapsed = time.perf_counter() - t0
    ok = 0.89 <= covs.mean() <= 0.91 and inside >= 42 and elapsed < 120
    verdict(3, "marginal validity on exchangeable data", ok,
            f"mean coverage {covs.mean():.4f}, {inside}/50 inside [{band[0]:.4f}, {band[1]:.4f}], "
            f"{elapsed:.1f}s")


# 4 -------------------------------------------------------------------------------


def test_04_beta_binomial_reference():
    ref = BetaBinomialRef(2000, 2000, 0.1)
    rng = np.random.default_rng(4)
    mu = rng.beta(*ref.beta_params, size=1_000_000)
    mc = rng.binomial(2000, mu) / 2000
    diffs = {p: abs(beta_binomial_quantile(ref, p) - float(np.quantile(mc, p))) for p in (0.05, 0.5, 0.95)}
    ok = ref.l == 200 and ref.beta_params == (1801, 200) and max(diffs.values()) <= 0.002
    verdict(4, "beta-binomial reference", ok,
            f"l={ref.l}, Beta{ref.beta_params}, max |quantile - MC| = {max(diffs.values()):.4f}")


# 5 -------------------------------------------------------------------------------


def test_05_kernel_constants():
    p = SpatialParams(0.3, 0.2, 4.0)
    spatial_term = lambda d: covariance_kernel(d, p) / p.sigma2 - 0.5  # noqa: E731
    half = optimize.brentq(spatial_term, 1e-6, 5.0, xtol=1e-14)
    calib = ds.HousingData(np.zeros((1, len(ds.COVARIATES))), np.zeros(1), np.array([[0.8, 0.0]]),
                           np.ones(1, dtype=int))
    test = ds.HousingData(np.zeros((1, len(ds.COVARIATES))), np.zeros(1), np.array([[0.0, 0.0]]),
                          np.ones(1, dtype=int))
    w = weight_matrix(test, calib, WeightScheme("spatial_gaussian", eta=DEFAULT_ETA))[0, 0]
    w_half = optimize.brentq(lambda d: math.exp(-d * d / DEFAULT_ETA) - 0.5, 0.1, 5.0, xtol=1e-14)
    ok = abs(half - 0.1733) <= 0.005 and abs(w - 0.5) < 1e-12 and abs(w_half - 0.8) < 1e-9
    verdict(5, "spatial kernel constants", ok,
            f"covariance halves at {1000 * half:.1f} m, SCP weight at 0.8 km = {w:.15f}")


# 6 -------------------------------------------------------------------------------


@pytest.mark.slow
def test_06_mle_self_consistency():
    t0 = time.perf_counter()
    true = SpatialParams(0.3, 0.2, 4.0)
    hits, fits = 0, []
    for seed in range(5):
        base = ds.synthetic_dwellings(800, seed=seed)
        X = dgp_design(base)
        y = sample_synthetic(X, base.locations, true, placeholder_beta(base), seed=seed)
        p, _ = fit_mle(X, y, base.locations, SpatialParams(0.5, 0.5, 2.0))
        fits.append(p)
        hits += (2 <= p.rho <= 8 and abs(p.sigma_eps2 / 0.3 - 1) <= 0.5
                 and abs(p.sigma2 / 0.2 - 1) <= 0.5)
    elapsed = time.perf_counter() - t0
    detail = "; ".join(f"({q.sigma_eps2:.3f}, {q.sigma2:.3f}, {q.rho:.2f})" for q in fits)
    verdict(6, "MLE recovers generating parameters", hits >= 4 and elapsed < 300,
            f"{hits}/5 seeds within tolerance, {elapsed:.0f}s; fits {detail}")


# 7 -------------------------------------------------------------------------------


def test_07_gls_ols_degeneracy():
    base = ds.synthetic_dwellings(600, seed=7)
    X = dgp_design(base)
    rng = np.random.default_rng(7)
    y = X @ placeholder_beta(base) + rng.normal(size=len(X))
    gls = fit_gls(X, y, base.locations, SpatialParams(0.5, 0.0, 4.0))
    ols = fit_ols(linear_design(base), y).coefficients
    coef_err = float(np.max(np.abs(gls.beta - ols) / np.maximum(1.0, np.abs(ols))))
    new = ds.synthetic_dwellings(200, seed=8)
    Xn = dgp_design(new)
    corr = float(np.max(np.abs(predict_gls(gls, Xn, new.locations)
                               - predict_gls(gls, Xn, new.locations, mode="mean_only"))))
    verdict(7, "GLS equals OLS without spatial variance", coef_err <= 1e-8 and corr < 1e-10,
            f"max coefficient difference {coef_err:.2e}, max kriging correction {corr:.2e}")


# 8 -------------------------------------------------------------------------------


def test_08_mondrian_equivalence():
    rng = np.random.default_rng(8)
    n = 900
    base = ds.synthetic_dwellings(n, seed=8)
    districts = rng.integers(1, 4, n)
    data = ds.HousingData(base.covariates, np.zeros(n), base.locations, districts, (1, 2, 3))
    X = linear_design(data)
    y = X[:, :13] @ rng.normal(scale=0.01, size=13) + rng.normal(size=n) * districts
    data = data.with_response(y)
    train, calib, test = _splits(data, 8)
    cfg = _ols_cfg(fit_ols(linear_design(train), train.y))
    mcp = conformal_predict(cfg, compute_scores(cfg, calib), test, WeightScheme("mondrian"), 0.1)
    identical = True
    for d in (1, 2, 3):
        c, t = calib.subset(np.flatnonzero(calib.districts == d)), np.flatnonzero(test.districts == d)
        sub = conformal_predict(cfg, compute_scores(cfg, c), test.subset(t), WeightScheme("uniform"), 0.1)
        identical &= np.array_equal(sub.lower, mcp.lower[t]) and np.array_equal(sub.upper, mcp.upper[t])
    verdict(8, "Mondrian weights equal per-district split CP", bool(identical),
            f"bitwise-identical bounds on {len(test)} test points in 3 districts: {identical}")


# 9 -------------------------------------------------------------------------------


def test_09_local_calibration_effect():
    wins = 0
    detail = []
    for seed in range(10):
        base = ds.synthetic_dwellings(3000, seed=100 + seed)
        sd = np.where(base.districts % 2 == 1, 0.5, 2.0)
        y = dgp_design(base) @ placeholder_beta(base) + sd * np.random.default_rng(seed).standard_normal(3000)
        train, calib, test = _splits(base.with_response(y), seed)
        cfg = _ols_cfg(fit_ols(linear_design(train), train.y))
        rec = compute_scores(cfg, calib)
        spread = {}
        for kind in ("uniform", "mondrian", "spatial_gaussian"):
            sets = conformal_predict(cfg, rec, test, WeightScheme(kind), 0.1)
            spread[kind] = float(np.std(district_report(sets, test.y, test.districts, 0.1).coverage_gap))
        wins += spread["spatial_gaussian"] < spread["uniform"] and spread["mondrian"] < spread["uniform"]
        detail.append(f"{spread['uniform']:.3f}/{spread['mondrian']:.3f}/{spread['spatial_gaussian']:.3f}")
    verdict(9, "local calibration shrinks district gap spread", wins >= 8,
            f"{wins}/10 seeds with SCP and MCP below CP; gap SD CP/MCP/SCP per seed: {', '.join(detail)}")


# 10 ------------------------------------------------------------------------------


def test_10_oracle_score_sanity():
    true = SpatialParams(0.5, 0.2, 4.0)
    inside = 0
    covs = []
    for seed in range(10):
        base = ds.synthetic_dwellings(1500, seed=200 + seed)
        X = dgp_design(base)
        beta = placeholder_beta(base)
        data = base.with_response(sample_synthetic(X, base.locations, true, beta, seed=seed))
        _, calib, test = _splits(data, seed)
        scorer = fit_oracle(dgp_design(calib), calib.y, calib.locations, true, beta)

        class Oracle:
            def calibration_scores(self, d):
                return scorer.scores

            def conditional_moments(self, d):
                return scorer.conditional_moments(dgp_design(d), d.locations)

        cfg = ScoreConfig("oracle", oracle=Oracle())
        sets = conformal_predict(cfg, compute_scores(cfg, calib), test, WeightScheme("uniform"), 0.1)
        cov = coverage_report(sets, test.y, 0.1, strict=False).coverage
        lo, hi = coverage_band(BetaBinomialRef(len(calib), len(test), 0.1))
        covs.append(cov)
        inside += lo <= cov <= hi
    verdict(10, "Oracle-score CP inside the beta-binomial band", inside >= 8,
            f"{inside}/10 seeds inside; coverages {', '.join(f'{c:.3f}' for c in covs)}")


# 11 / 12 -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("acceptance")
    cfg = tmp / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({
        "data": {"n": 450, "seeds": 2, "dir": str(tmp / "data")},
        "predictors": {"rf": {"n_trees": 100}, "gbt": {"n_trees": 200}, "qrf": {"n_trees": 100},
                       "fwcp": {"n_trees": 100}},
    }))
    codes = [main(["run", "--config", str(cfg), "--out", str(tmp / name)]) for name in ("a", "b")]
    return tmp, codes


def test_11_cli_determinism(two_runs):
    tmp, codes = two_runs
    a, b = (tmp / "a" / "summary.csv").read_bytes(), (tmp / "b" / "summary.csv").read_bytes()
    rows = len(pd.read_csv(tmp / "a" / "summary.csv"))
    verdict(11, "two identical runs give byte-identical summaries", codes == [0, 0] and a == b,
            f"exit codes {codes}, {rows} summary rows, identical={a == b}")


def test_12_accuracy_metrics(two_runs):
    tmp, _ = two_runs
    acc = pd.read_csv(tmp / "a" / "accuracy.csv")
    ordered = bool((acc.per20 >= acc.per10).all())
    worst = 0.0
    for seed in (0, 1):
        data = ds.load_housing(tmp / "data" / f"sim_seed{seed:03d}.csv")
        train, _, test = _splits(data, seed)
        pred = fit_ols(linear_design(train), train.y).predict(linear_design(test))
        pos = test.y > 0
        p, y = pred[pos], test.y[pos]
        err = np.abs(p - y)
        oracle = {"rmse": math.sqrt(math.fsum(e * e for e in err) / len(err)),
                  "mdae": float(np.partition(err, (len(err) - 1) // 2)[(len(err) - 1) // 2]),
                  "per10": 100 * sum(e <= 0.1 * t for e, t in zip(err, y)) / len(err),
                  "per20": 100 * sum(e <= 0.2 * t for e, t in zip(err, y)) / len(err)}
        row = acc[(acc.seed == seed) & (acc.model == "linear")].iloc[0]
        direct = accuracy_metrics(p, y)
        for k, v in oracle.items():
            worst = max(worst, abs(row[k] - v), abs(direct[k] - v))
    verdict(12, "accuracy metrics", ordered and worst <= 1e-12,
            f"per20 >= per10 on all {len(acc)} rows: {ordered}; max deviation from recomputation {worst:.1e}")
