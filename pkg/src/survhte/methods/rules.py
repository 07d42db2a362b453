"""Rule-based subgroup searches: SIDES, sequential bump targeting, directed peeling.

All three score candidate subgroups through a Cox model on the treatment
indicator, batched over candidates via row weights. Benefit z is -beta/se of
the treatment coefficient, so positive values mean the treated arm fares better.
"""
from __future__ import annotations

import math

import numpy as np

from ..survival import TrialData, fit_cox_batch
from .base import MethodResult, rule_order_importance
from .predictors import ThresholdRule

QUANTILES = (0.2, 0.4, 0.6, 0.8)
MIN_SUBGROUP = 30


def benefit_z(data: TrialData, masks) -> np.ndarray:
    """Cox(W) benefit z within each row mask; nan where unfittable."""
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    w = data.treatment.astype(float)[:, None]
    fit = fit_cox_batch(np.broadcast_to(w, (len(masks),) + w.shape), data.time, data.event,
                        weights=masks.astype(float))
    se = np.sqrt(np.maximum(fit.covariance[:, 0, 0], 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = -fit.coefficients[:, 0] / se
    return np.where(fit.fittable & (se > 0) & np.isfinite(z), z, np.nan)


# --- SIDES ----------------------------------------------------------------

SIDES_WIDTH = 3
SIDES_DEPTH = 2


def _sides_children(data, parent, exclude):
    """Best split per variable inside ``parent``; returns candidate list sorted by score.

    Each candidate is (score, var, clause, child_mask, child_z).
    """
    x = data.covariates
    clauses, masks = [], []
    for j in range(data.p):
        if j in exclude:
            continue
        for c in np.quantile(x[parent, j], QUANTILES):
            for d, m in (("<=", x[:, j] <= c), (">", x[:, j] > c)):
                clauses.append((j, float(c), d))
                masks.append(parent & m)
    if not masks:
        return []
    masks = np.array(masks)
    z = benefit_z(data, masks)
    best = {}
    for k in range(0, len(masks), 2):
        z1, z2 = z[k], z[k + 1]
        if np.isnan(z1) or np.isnan(z2):
            continue
        score = abs(z1 - z2) / math.sqrt(2)
        # promising child = larger benefit
        pick = k if z1 >= z2 else k + 1
        if masks[pick].sum() < MIN_SUBGROUP:
            continue
        j = clauses[k][0]
        if j not in best or score > best[j][0]:
            best[j] = (score, j, clauses[pick], masks[pick], float(z[pick]))
    # stable: ties resolved by smaller variable index
    return sorted(best.values(), key=lambda c: (-c[0], c[1]))


def sides_search(train: TrialData, width=SIDES_WIDTH, depth=SIDES_DEPTH):
    """Terminal candidates as (clauses, membership mask, benefit z)."""
    frontier = [((), np.ones(train.n, dtype=bool), None)]
    terminal = []
    for _ in range(depth):
        nxt = []
        for path, mask, z in frontier:
            kids = _sides_children(train, mask, {c[0] for c in path})[:width]
            if not kids and path:
                terminal.append((path, mask, z))
            for _, _, clause, m, zc in kids:
                nxt.append((path + (clause,), m, zc))
        frontier = nxt
    return terminal + frontier


def fit_sides(train: TrialData, rng=None, width=SIDES_WIDTH, depth=SIDES_DEPTH) -> MethodResult:
    terminal = sides_search(train, width, depth)
    if not terminal:
        return MethodResult("sides", het_degenerate=True, importance=np.zeros(train.p),
                            note="no candidate subgroup")
    # first maximum wins, i.e. the earliest-ranked candidate
    path, _, _ = max(terminal, key=lambda t: t[2])
    rule = ThresholdRule(path, 1)
    return MethodResult("sides", importance=rule_order_importance(rule.variables(), train.p),
                        predictor=rule)


# --- sequential bump targeting ---------------------------------------------

SEQBT_MAX_FACTORS = 4


def _interaction_fit(data, indicators):
    w = data.treatment.astype(float)
    I = np.asarray(indicators, dtype=float)
    Wb = np.broadcast_to(w, I.shape)
    return fit_cox_batch(np.stack([Wb, I, I * Wb], axis=-1), data.time, data.event)


def seqbt_search(train: TrialData, max_factors=SEQBT_MAX_FACTORS):
    """Accepted steps as (clauses, interaction p, interaction coefficient, members)."""
    x = train.covariates
    clauses: tuple = ()
    members = np.ones(train.n, dtype=bool)
    best_p = 1.0
    steps = []
    for _ in range(max_factors):
        cands, inds = [], []
        for j in range(train.p):
            for c in np.quantile(x[members, j], QUANTILES):
                for d, m in (("<=", x[:, j] <= c), (">=", x[:, j] >= c)):
                    ind = members & m
                    k = ind.sum()
                    if k >= MIN_SUBGROUP and train.n - k >= MIN_SUBGROUP:
                        cands.append((j, float(c), d))
                        inds.append(ind)
        if not inds:
            break
        fit = _interaction_fit(train, inds)
        pv = np.where(fit.fittable, fit.wald_p[:, 2], 1.0)
        k = int(np.argmin(pv))
        if pv[k] >= best_p:
            break
        best_p = float(pv[k])
        clauses += (cands[k],)
        members = inds[k]
        steps.append((clauses, best_p, float(fit.coefficients[k, 2]), members))
    return steps


def fit_seqbt(train: TrialData, rng=None, max_factors=SEQBT_MAX_FACTORS) -> MethodResult:
    steps = seqbt_search(train, max_factors)
    if not steps:
        return MethodResult("seqbt", het_degenerate=True, importance=np.zeros(train.p),
                            note="no valid rule")
    clauses, _, coef, _ = steps[-1]
    # negative interaction: members gain more from treatment
    rule = ThresholdRule(clauses, 1 if coef < 0 else 0)
    return MethodResult("seqbt", importance=rule_order_importance(rule.variables(), train.p),
                        predictor=rule)


# --- directed peeling ------------------------------------------------------

PEEL_FRACTION = 0.05
FLOOR_FRACTION = 0.2


def peel(train: TrialData, fraction=PEEL_FRACTION, floor=FLOOR_FRACTION):
    """Greedy peeling path; returns (clauses, list of membership masks).

    Each step removes ``ceil(fraction * m)`` current members from one tail of
    one covariate, the move that maximizes the remaining subgroup's benefit z.
    """
    x = train.covariates
    members = np.ones(train.n, dtype=bool)
    clauses, path = [], [members]
    while True:
        m = int(members.sum())
        q = math.ceil(fraction * m)
        if m - q < floor * train.n:
            break
        moves, masks = [], []
        for j in range(train.p):
            vals = np.sort(x[members, j])
            lo, hi = vals[q], vals[m - q - 1]
            # keep x >= lo (peel low tail) or x <= hi (peel high tail)
            for c, d in ((lo, ">="), (hi, "<=")):
                keep = members & (x[:, j] >= c if d == ">=" else x[:, j] <= c)
                if keep.sum() < m:
                    moves.append((j, float(c), d))
                    masks.append(keep)
        if not masks:
            break
        z = benefit_z(train, masks)
        if np.all(np.isnan(z)):
            break
        k = int(np.nanargmax(z))
        clauses.append(moves[k])
        members = masks[k]
        path.append(members)
    return tuple(clauses), path


def fit_ardp(train: TrialData, rng=None) -> MethodResult:
    if train.n < 50:
        raise ValueError("need at least 50 samples")
    clauses, path = peel(train)
    rule = ThresholdRule(clauses, 1)
    return MethodResult("ardp", importance=rule_order_importance(rule.variables(), train.p),
                        predictor=rule, note=f"{len(path) - 1} peels")
