"""Benchmark metrics: rejection rates, ranking quality, classification accuracy.

Proportions carry the binomial-normal 95% half-width; continuous per-repetition
scores (average precision, accuracy, timings) use 1.96 * sd / sqrt(R).
"""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

Z95 = 1.96
AGGREGATE_FIELDS = ("scenario", "arr1", "method", "metric", "mean", "half_width", "count")


def proportion_half_width(mean, count) -> float:
    return float(Z95 * np.sqrt(mean * (1.0 - mean) / count)) if count else float("nan")


def rejection_rate(pvalues, alpha=0.05):
    """Fraction of p-values strictly below ``alpha`` and its 95% half-width."""
    p = np.asarray(pvalues, dtype=float)
    if p.size == 0:
        raise ValueError("no p-values")
    rate = float(np.mean(p < alpha))
    return rate, proportion_half_width(rate, p.size)


def _ranking(importance) -> np.ndarray:
    # descending score, smaller index first on ties
    imp = np.asarray(importance, dtype=float)
    return np.lexsort((np.arange(imp.size), -imp))


def top_rank_hit(importance, predictive_set) -> bool:
    imp = np.asarray(importance, dtype=float)
    if not np.any(imp > 0):
        return False
    return int(_ranking(imp)[0]) in set(int(i) for i in predictive_set)


def average_precision(importance, labels) -> float:
    """Mean of precision@k over the ranks k holding a positive."""
    labels = np.asarray(labels, dtype=bool)
    if not labels.any():
        raise ValueError("average precision needs at least one positive label")
    hits = labels[_ranking(importance)]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def classification_accuracy(predictor, validation):
    """Fraction of validation rows where the predicted label equals the true subgroup."""
    if predictor is None:
        return None
    if validation.true_subgroup is None:
        raise ValueError("validation data lacks ground-truth labels")
    return float(np.mean(predictor.predict(validation.covariates) == validation.true_subgroup))


@dataclass(frozen=True)
class RepetitionRecord:
    scenario: str
    arr1: float
    rep: int
    method: str
    het_p: float | None = None
    degenerate: bool = False
    top_var: int | None = None
    importance: tuple | None = None
    accuracy: float | None = None
    fit_seconds: float = 0.0
    rule: str = ""
    error: str = ""

    def key(self):
        return (self.scenario, self.arr1, self.rep, self.method)


@dataclass(frozen=True)
class AggregateRow:
    scenario: str
    arr1: float
    method: str
    metric: str
    mean: float
    half_width: float
    count: int

    def as_dict(self):
        return {f: getattr(self, f) for f in AGGREGATE_FIELDS}


def _mean_row(key, metric, values, proportion):
    v = np.asarray(values, dtype=float)
    m = float(v.mean())
    if proportion:
        hw = proportion_half_width(m, v.size)
    else:
        hw = float(Z95 * v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
    return AggregateRow(key[0], key[1], key[2], metric, m, hw, int(v.size))


def aggregate(records, predictive_set, alpha=0.05) -> list[AggregateRow]:
    """Per (scenario, arr1, method): power, top_rank, average_precision, accuracy, fit_seconds."""
    groups = defaultdict(list)
    for r in records:
        groups[(r.scenario, r.arr1, r.method)].append(r)
    rows = []
    for key in sorted(groups):
        recs = groups[key]
        pv = [r.het_p for r in recs if r.het_p is not None]
        if pv:
            rate, hw = rejection_rate(pv, alpha)
            rows.append(AggregateRow(*key, "power", rate, hw, len(pv)))
        imps = [r.importance for r in recs if r.importance is not None]
        if imps:
            p = len(imps[0])
            labels = np.zeros(p, dtype=bool)
            labels[list(predictive_set)] = True
            rows.append(_mean_row(key, "top_rank", [top_rank_hit(i, predictive_set) for i in imps], True))
            rows.append(_mean_row(key, "average_precision", [average_precision(i, labels) for i in imps], False))
        acc = [r.accuracy for r in recs if r.accuracy is not None]
        if acc:
            rows.append(_mean_row(key, "accuracy", acc, False))
        secs = [r.fit_seconds for r in recs if not r.error]
        if secs:
            rows.append(_mean_row(key, "fit_seconds", secs, False))
    return rows


def write_aggregate(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=AGGREGATE_FIELDS)
        w.writeheader()
        for r in rows:
            d = r.as_dict()
            d["arr1"] = repr(float(d["arr1"]))
            d["mean"] = repr(d["mean"])
            d["half_width"] = repr(d["half_width"])
            w.writerow(d)


def read_aggregate(path) -> list[AggregateRow]:
    with open(path, newline="") as fh:
        return [AggregateRow(r["scenario"], float(r["arr1"]), r["method"], r["metric"],
                             float(r["mean"]), float(r["half_width"]), int(r["count"]))
                for r in csv.DictReader(fh)]
