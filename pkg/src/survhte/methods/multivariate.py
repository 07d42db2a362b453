"""S-learners: one survival model on (X, W), ARR from counterfactual predictions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..survival import CoxFit, TrialData, fit_cox, kaplan_meier, predict_survival
from .base import MethodResult, inverse_p_importance
from .predictors import ArrSign

RIDGE = 0.1


@dataclass(frozen=True)
class CoxSLearner:
    fit: CoxFit
    p: int

    @staticmethod
    def design(x, w):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        w = np.broadcast_to(np.asarray(w, dtype=float), (x.shape[0],))
        return np.column_stack([w, x, w[:, None] * x])

    def survival(self, x, w, t):
        return predict_survival(self.fit, self.design(x, w), t)

    def arr(self, x, t=1.0):
        return self.survival(x, 1, t) - self.survival(x, 0, t)


def fit_multivariate_cox(train: TrialData, rng=None, ridge=RIDGE) -> MethodResult:
    if train.event.sum() < 2:
        raise ValueError("need at least two events")
    p = train.p
    X = CoxSLearner.design(train.covariates, train.treatment)
    # randomized treatment: its main effect is left unpenalized
    mask = np.zeros(X.shape[1], dtype=bool)
    mask[0] = True
    fit = fit_cox(X, train.time, train.event, ridge=ridge, unpenalized_mask=mask)
    model = CoxSLearner(fit, p)
    note = "" if fit.converged else "cox did not converge"
    return MethodResult("multivariate_cox", importance=inverse_p_importance(fit.wald_p[1 + p:]),
                        predictor=ArrSign(model), note=note)


# --- log-rank survival tree ----------------------------------------------

@dataclass
class SurvNode:
    id: int
    size: int
    depth: int
    feature: int = -1
    threshold: float = float("nan")
    left: "SurvNode | None" = None
    right: "SurvNode | None" = None
    curve: object = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class SurvivalTree:
    """Binary tree on columns [x_1..x_p, w]; left child takes value <= threshold."""
    root: SurvNode
    nodes: list = field(default_factory=list)

    def apply(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.empty(z.shape[0], dtype=int)
        stack = [(self.root, np.arange(z.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if node.is_leaf:
                out[rows] = node.id
                continue
            go_left = z[rows, node.feature] <= node.threshold
            stack.append((node.left, rows[go_left]))
            stack.append((node.right, rows[~go_left]))
        return out

    def leaf_survival(self, z, t) -> np.ndarray:
        leaves = self.apply(z)
        vals = {n.id: float(n.curve(t)) for n in self.nodes if n.is_leaf}
        return np.array([vals[i] for i in leaves])

    def uses_feature(self, j) -> bool:
        return any(not n.is_leaf and n.feature == j for n in self.nodes)


def logrank_split_scores(x, time, event, min_leaf):
    """Log-rank chi2 for every split 'x <= c' of one node, vectorized.

    Returns (thresholds, chi2) over admissible cut points: both sides hold at
    least ``min_leaf`` rows and the cut falls between distinct values.
    """
    m = len(x)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ev_times = np.unique(time[event == 1])
    if len(ev_times) == 0 or m < 2 * min_leaf:
        return np.empty(0), np.empty(0)
    at_risk = (time[order][:, None] >= ev_times[None, :]).astype(float)
    died = ((time[order][:, None] == ev_times[None, :]) & (event[order][:, None] == 1)).astype(float)
    Y = at_risk.sum(axis=0)
    d = died.sum(axis=0)
    k = np.arange(min_leaf, m - min_leaf + 1)
    k = k[xs[k - 1] < xs[np.minimum(k, m - 1)]]
    if len(k) == 0:
        return np.empty(0), np.empty(0)
    YL = np.cumsum(at_risk, axis=0)[k - 1]
    dL = np.cumsum(died, axis=0)[k - 1]
    frac = YL / Y
    oe = np.sum(dL - frac * d, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(Y > 1, (Y - d) / (Y - 1) * d, 0.0)
    var = np.sum(frac * (1 - frac) * c, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        chi2 = np.where(var > 0, oe**2 / var, 0.0)
    thresholds = 0.5 * (xs[k - 1] + xs[k])
    return thresholds, chi2


def grow_survival_tree(z, time, event, max_depth=5, min_leaf=20) -> SurvivalTree:
    z = np.asarray(z, dtype=float)
    nodes: list[SurvNode] = []

    def build(rows, depth):
        node = SurvNode(len(nodes), len(rows), depth)
        nodes.append(node)
        best = (0.0, -1, 0.0)
        if depth < max_depth and len(rows) >= 2 * min_leaf:
            for j in range(z.shape[1]):
                thr, chi2 = logrank_split_scores(z[rows, j], time[rows], event[rows], min_leaf)
                if len(chi2) and chi2.max() > best[0]:
                    i = int(np.argmax(chi2))
                    best = (float(chi2[i]), j, float(thr[i]))
        if best[1] < 0:
            node.curve = kaplan_meier(time[rows], event[rows])
            return node
        node.feature, node.threshold = best[1], best[2]
        go_left = z[rows, node.feature] <= node.threshold
        node.left = build(rows[go_left], depth + 1)
        node.right = build(rows[~go_left], depth + 1)
        return node

    root = build(np.arange(z.shape[0]), 0)
    return SurvivalTree(root, nodes)


@dataclass(frozen=True)
class TreeSLearner:
    tree: SurvivalTree

    def arr(self, x, t=1.0):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ones, zeros = np.ones((x.shape[0], 1)), np.zeros((x.shape[0], 1))
        s1 = self.tree.leaf_survival(np.hstack([x, ones]), t)
        s0 = self.tree.leaf_survival(np.hstack([x, zeros]), t)
        return s1 - s0


def fit_multivariate_tree(train: TrialData, rng=None, max_depth=5, min_leaf=20) -> MethodResult:
    if train.n < 2 * min_leaf:
        raise ValueError("too few samples for the minimum leaf size")
    z = np.column_stack([train.covariates, train.treatment])
    tree = grow_survival_tree(z, train.time, train.event, max_depth, min_leaf)
    note = "" if tree.uses_feature(train.p) else "no split on treatment"
    return MethodResult("multivariate_tree", predictor=ArrSign(TreeSLearner(tree)), note=note)
