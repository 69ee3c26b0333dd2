"""Tables and SVG charts from a finished ``run``."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from ..evaluation import BetaBinomialRef, beta_binomial_quantile
from ..exceptions import MissingResults
from . import svg

REQUIRED = ("summary.csv", "cells.csv", "accuracy.csv", "district_gaps.csv", "run.json")


def _load(results):
    results = Path(results)
    missing = [f for f in REQUIRED if not (results / f).is_file()]
    if missing:
        raise MissingResults(f"{results} lacks {', '.join(missing)}")
    meta = json.loads((results / "run.json").read_text())
    return (meta, pd.read_csv(results / "summary.csv", keep_default_na=False, na_values=[""]),
            pd.read_csv(results / "accuracy.csv"), pd.read_csv(results / "district_gaps.csv"))


def gap_band(alpha, n_calib, n_test, lo=0.05, hi=0.95):
    """Beta-binomial coverage quantiles expressed as coverage gaps ``(lower, upper)``."""
    ref = BetaBinomialRef(n_calib, n_test, alpha)
    return (1 - alpha) - beta_binomial_quantile(ref, hi), (1 - alpha) - beta_binomial_quantile(ref, lo)


def coverage_chart_frame(summary, alpha, n_calib, n_test):
    g_lo, g_hi = gap_band(alpha, n_calib, n_test)
    out = summary.copy()
    out["band_gap_lo"] = g_lo
    out["band_gap_hi"] = g_hi
    return out


def _panels(frame, column):
    panels = []
    for model, sub in frame.groupby("model", sort=False):
        cats = list(dict.fromkeys(sub["score"]))
        series = {}
        for scheme, s2 in sub.groupby("scheme", sort=False):
            lookup = dict(zip(s2["score"], s2[column].astype(float)))
            series[scheme] = [lookup.get(c) for c in cats]
        panels.append((model, cats, series))
    return panels


def district_box_frame(dist, alpha, n_calib, n_test):
    n_districts = dist["district"].nunique()
    ref = BetaBinomialRef(n_calib, max(1, round(n_test / n_districts)), alpha)
    ref_q1 = (1 - alpha) - beta_binomial_quantile(ref, 0.75)
    ref_q3 = (1 - alpha) - beta_binomial_quantile(ref, 0.25)
    rows = []
    keys = ["model", "score", "scheme"]
    avg = dist.groupby(keys + ["district"], sort=False)["coverage_gap"].mean().reset_index()
    for key, sub in avg.groupby(keys, sort=False):
        g = sub["coverage_gap"].to_numpy()
        q = np.percentile(g, [0, 25, 50, 75, 100])
        rows.append(dict(zip(keys, key), min=q[0], q1=q[1], median=q[2], q3=q[3], max=q[4],
                         ref_q1=ref_q1, ref_q3=ref_q3))
    return pd.DataFrame(rows)


def report(results, out=None):
    """Write accuracy/coverage/efficiency/district tables and charts; returns written paths."""
    meta, summary, acc, dist = _load(results)
    out = Path(out or results)
    out.mkdir(parents=True, exist_ok=True)
    alpha, n_calib, n_test = meta["alpha"], meta["n_calib"], meta["n_test"]
    written = []

    table = acc.groupby("model", sort=False)[["rmse", "mdae", "per10", "per20"]].mean().reset_index()
    table.to_csv(out / "accuracy_table.csv", index=False)
    written.append(out / "accuracy_table.csv")

    ok = summary[summary["n_seeds"] > 0]
    chart = coverage_chart_frame(ok, alpha, n_calib, n_test)
    chart.to_csv(out / "chart_coverage.csv", index=False)
    g_lo, g_hi = chart["band_gap_lo"].iloc[0], chart["band_gap_hi"].iloc[0]
    (out / "coverage_gap.svg").write_text(svg.grouped_points(
        _panels(ok, "coverage_gap"), f"Coverage gap from {1 - alpha:g}", "coverage gap",
        hlines=[(g_lo, "5%/95% beta-binomial"), (g_hi, ""), (0.0, "")]))
    (out / "relative_efficiency.svg").write_text(svg.grouped_points(
        _panels(ok, "relative_efficiency"), "Set size as % of sale price", "relative efficiency (%)"))
    written += [out / "chart_coverage.csv", out / "coverage_gap.svg", out / "relative_efficiency.svg"]

    boxes = district_box_frame(dist, alpha, n_calib, n_test)
    boxes.to_csv(out / "district_boxplot.csv", index=False)
    if not boxes.empty:
        items = [(f"{r.model}/{r.score}/{r.scheme}", r._asdict()) for r in boxes.itertuples(index=False)]
        (out / "district_boxplot.svg").write_text(svg.boxplots(
            items, "District coverage gaps", "coverage gap",
            hlines=[(boxes["ref_q1"].iloc[0], "beta-binomial quartiles"), (boxes["ref_q3"].iloc[0], "")]))
        written.append(out / "district_boxplot.svg")
    written.append(out / "district_boxplot.csv")
    return written
