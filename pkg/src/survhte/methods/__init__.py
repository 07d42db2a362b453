"""Subgroup analysis methods and a registry keyed by method id.

In-fit methods report a heterogeneity p-value from the fit itself; predictive
methods only emit a good-responder rule, which the harness tests on held-out data.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..survival import TrialData, diff_in_diff_test
from .base import MethodResult, bonferroni, inverse_p_importance, rule_order_importance
from .multivariate import fit_multivariate_cox, fit_multivariate_tree
from .predictors import ArrSign, GeneratingRule, SubgroupPredictor, ThresholdRule, TreePath
from .rules import fit_ardp, fit_seqbt, fit_sides
from .trees import FittedTree, TreeNode, fit_itree, fit_mob, tree_feature_importance
from .univariate import fit_oracle, fit_univariate_interaction, fit_univariate_ttest


@dataclass(frozen=True)
class MethodSpec:
    id: str
    fit: Callable
    in_fit: bool
    ranks: bool
    # combinatorial search; refused above ``max_p`` unless forced
    max_p: int | None = None


METHODS = {m.id: m for m in (
    MethodSpec("univariate_interaction", fit_univariate_interaction, True, True),
    MethodSpec("univariate_ttest", fit_univariate_ttest, True, True),
    MethodSpec("multivariate_cox", fit_multivariate_cox, False, True),
    MethodSpec("multivariate_tree", fit_multivariate_tree, False, False),
    MethodSpec("mob", fit_mob, True, True),
    MethodSpec("itree", fit_itree, True, True),
    MethodSpec("sides", fit_sides, False, True, max_p=30),
    MethodSpec("seqbt", fit_seqbt, False, True, max_p=30),
    MethodSpec("ardp", fit_ardp, False, True),
    MethodSpec("oracle", fit_oracle, True, False),
)}


def run_method(method_id, train: TrialData, rng, **kw) -> MethodResult:
    """Fit one method and record the wall-clock time of the fit call alone."""
    spec = METHODS[method_id]
    t0 = time.perf_counter()
    res = spec.fit(train, rng, **kw)
    return res.with_(fit_seconds=time.perf_counter() - t0)


def held_out_pvalue(result: MethodResult, test: TrialData, rng):
    """Diff-in-diff p on test data for the method's rule; (p, degenerate)."""
    if result.predictor is None:
        return float(rng.uniform()), True
    labels = result.predictor.predict(test.covariates)
    res = diff_in_diff_test(test, labels, rng)
    return res.p_value, res.degenerate


__all__ = [
    "METHODS", "MethodSpec", "MethodResult", "run_method", "held_out_pvalue",
    "SubgroupPredictor", "ThresholdRule", "TreePath", "ArrSign", "GeneratingRule",
    "FittedTree", "TreeNode", "tree_feature_importance",
    "bonferroni", "inverse_p_importance", "rule_order_importance",
    "fit_univariate_interaction", "fit_univariate_ttest", "fit_multivariate_cox",
    "fit_multivariate_tree", "fit_mob", "fit_itree", "fit_sides", "fit_seqbt", "fit_ardp",
    "fit_oracle",
]
