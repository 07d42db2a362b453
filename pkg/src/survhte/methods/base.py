from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..survival import P_FLOOR, TrialData, km_arr
from .predictors import SubgroupPredictor, ThresholdRule


@dataclass(frozen=True)
class MethodResult:
    method_id: str
    het_p: float | None = None
    het_degenerate: bool = False
    importance: np.ndarray | None = None
    predictor: SubgroupPredictor | None = None
    fit_seconds: float = 0.0
    note: str = ""

    def with_(self, **kw) -> "MethodResult":
        return replace(self, **kw)


def bonferroni(p, m) -> float:
    return float(min(1.0, float(p) * m))


def inverse_p_importance(pvals) -> np.ndarray:
    return 1.0 / np.maximum(np.asarray(pvals, dtype=float), P_FLOOR)


def rule_order_importance(variables, p) -> np.ndarray:
    """First variable of a rule scores len(rule), the last scores 1, unused 0."""
    imp = np.zeros(p)
    L = len(variables)
    for k, j in enumerate(variables):
        imp[j] = L - k
    return imp


def top_variable(importance) -> int:
    """Argmax with smallest-index tie-break."""
    return int(np.argmax(np.asarray(importance)))


def median_split_rule(data: TrialData, j: int) -> ThresholdRule:
    """Median split on x_j, oriented so the side with larger KM ARR(1) is good."""
    x = data.covariates[:, j]
    med = float(np.median(x))
    above = x > med
    arr_above = km_arr(data.time[above], data.event[above], data.treatment[above])
    arr_below = km_arr(data.time[~above], data.event[~above], data.treatment[~above])
    inside = 1 if arr_above >= arr_below else 0
    return ThresholdRule(((j, med, ">"),), inside)
