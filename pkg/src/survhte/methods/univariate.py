"""One-covariate-at-a-time heterogeneity tests and the ground-truth oracle."""
from __future__ import annotations

import numpy as np

from ..survival import TrialData, diff_in_diff_test, fit_cox, fit_cox_batch
from .base import (MethodResult, bonferroni, inverse_p_importance, median_split_rule,
                   top_variable)
from .predictors import GeneratingRule


def interaction_pvalues(data: TrialData) -> np.ndarray:
    """Wald p of the x_j * W term in Cox(x_j, W, x_j W), for every j."""
    x, w = data.covariates, data.treatment.astype(float)
    designs = np.stack([x.T, np.broadcast_to(w, x.T.shape), x.T * w], axis=-1)
    fit = fit_cox_batch(designs, data.time, data.event)
    return np.where(fit.fittable, fit.wald_p[:, 2], 1.0)


def fit_univariate_interaction(train: TrialData, rng=None) -> MethodResult:
    if train.event.sum() < 2:
        raise ValueError("need at least two events")
    pvals = interaction_pvalues(train)
    imp = inverse_p_importance(pvals)
    top = top_variable(imp)
    return MethodResult("univariate_interaction", het_p=bonferroni(pvals.min(), train.p),
                        importance=imp, predictor=median_split_rule(train, top))


def fit_univariate_ttest(train: TrialData, rng) -> MethodResult:
    if train.n < 4:
        raise ValueError("need at least four samples")
    pvals = np.empty(train.p)
    degenerate = np.zeros(train.p, dtype=bool)
    for j in range(train.p):
        x = train.covariates[:, j]
        res = diff_in_diff_test(train, (x > np.median(x)).astype(int), rng)
        pvals[j], degenerate[j] = res.p_value, res.degenerate
    imp = inverse_p_importance(pvals)
    top = top_variable(imp)
    return MethodResult("univariate_ttest", het_p=bonferroni(pvals.min(), train.p),
                        het_degenerate=bool(degenerate[int(np.argmin(pvals))]),
                        importance=imp, predictor=median_split_rule(train, top))


def fit_oracle(train: TrialData, rng=None, subgroup=None) -> MethodResult:
    """Interaction test on the true subgroup indicator."""
    if train.true_subgroup is None:
        raise ValueError("oracle needs ground-truth subgroup labels")
    g = train.true_subgroup.astype(float)
    w = train.treatment.astype(float)
    fit = fit_cox(np.column_stack([g, w, g * w]), train.time, train.event)
    imp = np.zeros(train.p)
    predictor = None
    if subgroup is not None:
        imp[subgroup.indices] = 1.0
        predictor = GeneratingRule(subgroup)
    return MethodResult("oracle", het_p=float(fit.wald_p[2]), importance=imp, predictor=predictor)
