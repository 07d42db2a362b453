"""Interaction trees: model-based partitioning (MOB) and ITree.

Both grow a binary tree whose split variable is chosen by a Bonferroni-adjusted
test at each node; the root's adjusted p-value is the heterogeneity p-value.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..survival import P_FLOOR, TrialData, cox_score_residuals, fit_cox_batch, km_arr
from .base import MethodResult, bonferroni
from .predictors import TreePath

ALPHA = 0.05
MAX_DEPTH = 3
MIN_CHILD = 50
ITREE_QUANTILES = (0.2, 0.4, 0.6, 0.8)
MOB_QUANTILES = tuple(np.round(np.arange(0.1, 0.91, 0.1), 2))


@dataclass
class TreeNode:
    id: int
    size: int
    depth: int
    feature: int = -1
    threshold: float = float("nan")
    p_value: float = 1.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    leaf_arr: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class FittedTree:
    root: TreeNode
    nodes: list = field(default_factory=list)
    n: int = 0
    root_p: float = 1.0
    splittable: bool = True

    def apply(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty(x.shape[0], dtype=int)
        stack = [(self.root, np.arange(x.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if node.is_leaf:
                out[rows] = node.id
                continue
            go_left = x[rows, node.feature] <= node.threshold
            stack.append((node.left, rows[go_left]))
            stack.append((node.right, rows[~go_left]))
        return out

    def leaves(self) -> list[TreeNode]:
        return [nd for nd in self.nodes if nd.is_leaf]

    def internal(self) -> list[TreeNode]:
        return [nd for nd in self.nodes if not nd.is_leaf]

    def path_to(self, leaf_id) -> list[tuple]:
        def walk(node, acc):
            if node.id == leaf_id:
                return acc
            if node.is_leaf:
                return None
            return (walk(node.left, acc + [(node.feature, node.threshold, "<=")])
                    or walk(node.right, acc + [(node.feature, node.threshold, ">")]))
        return walk(self.root, []) or []

    def best_leaf(self) -> TreeNode:
        """Leaf with the largest KM ARR(1); lowest id on ties."""
        leaves = sorted(self.leaves(), key=lambda nd: nd.id)
        return max(leaves, key=lambda nd: nd.leaf_arr)


def tree_feature_importance(tree: FittedTree, total_size, p) -> np.ndarray:
    """I(X_i) = sum over nodes splitting on X_i of (1 / p_v) * (S_v / S)."""
    imp = np.zeros(p)
    for nd in tree.internal():
        imp[nd.feature] += (1.0 / max(nd.p_value, P_FLOOR)) * (nd.size / total_size)
    return imp


def _grow(data: TrialData, choose_split, max_depth=MAX_DEPTH, min_child=MIN_CHILD,
          alpha=ALPHA) -> FittedTree:
    nodes: list[TreeNode] = []
    root_info = {}

    def build(rows, depth):
        node = TreeNode(len(nodes), len(rows), depth)
        nodes.append(node)
        split = None
        if depth < max_depth and len(rows) >= 2 * min_child:
            split = choose_split(data, rows, min_child)
        if depth == 0:
            root_info["split"] = split
        if split is not None and split[2] < alpha:
            feature, threshold, p_adj = split
            go_left = data.covariates[rows, feature] <= threshold
            node.feature, node.threshold, node.p_value = feature, threshold, p_adj
            node.left = build(rows[go_left], depth + 1)
            node.right = build(rows[~go_left], depth + 1)
        else:
            r = rows
            node.leaf_arr = km_arr(data.time[r], data.event[r], data.treatment[r])
        return node

    root = build(np.arange(data.n), 0)
    split = root_info["split"]
    return FittedTree(root, nodes, data.n, 1.0 if split is None else split[2], split is not None)


def _cox_w_fits(data, rows, masks):
    """Cox(W) fitted separately on each boolean row mask within ``rows``."""
    w = data.treatment[rows].astype(float)[:, None]
    weights = np.asarray(masks, dtype=float)
    return fit_cox_batch(np.broadcast_to(w, (len(weights),) + w.shape), data.time[rows],
                         data.event[rows], weights=weights)


def mob_split(data: TrialData, rows, min_child):
    x = data.covariates[rows]
    w = data.treatment[rows].astype(float)
    t, e = data.time[rows], data.event[rows]
    if e.sum() == 0 or w.min() == w.max():
        return None
    fit = fit_cox_batch(w[:, None], t, e)
    resid = cox_score_residuals(w, t, e, fit.coefficients[0])[:, 0]
    n, p = x.shape
    xc = x - x.mean(axis=0)
    rc = resid - resid.mean()
    denom = np.sqrt((xc**2).sum(axis=0) * (rc**2).sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(denom > 0, xc.T @ rc / denom, 0.0)
    r = np.clip(r, -1.0, 1.0)
    with np.errstate(divide="ignore"):
        tstat = r * np.sqrt((n - 2) / np.maximum(1 - r**2, 1e-300))
    pvals = 2 * stats.t.sf(np.abs(tstat), n - 2)
    j = int(np.argmin(pvals))
    p_adj = bonferroni(pvals[j], p)
    cands = np.unique(np.quantile(x[:, j], MOB_QUANTILES))
    masks, keep = [], []
    for c in cands:
        left = x[:, j] <= c
        if left.sum() >= min_child and (~left).sum() >= min_child:
            masks.extend([left, ~left])
            keep.append(c)
    if not keep:
        return None
    fits = _cox_w_fits(data, rows, masks)
    ll = fits.loglik.reshape(-1, 2).sum(axis=1)
    return j, float(keep[int(np.argmax(ll))]), p_adj


def itree_split(data: TrialData, rows, min_child):
    x = data.covariates[rows]
    w = data.treatment[rows].astype(float)
    t, e = data.time[rows], data.event[rows]
    if e.sum() == 0:
        return None
    n, p = x.shape
    q = len(ITREE_QUANTILES)
    thr = np.quantile(x, ITREE_QUANTILES, axis=0).T  # (p, q)
    Z = (x.T[:, None, :] <= thr[:, :, None]).astype(float).reshape(p * q, n)
    sizes = Z.sum(axis=1)
    valid = (sizes >= min_child) & (n - sizes >= min_child)
    if not valid.any():
        return None
    Wb = np.broadcast_to(w, Z.shape)
    designs = np.stack([Wb, Z, Z * Wb], axis=-1)[valid]
    fit = fit_cox_batch(designs, t, e)
    pv = np.ones(p * q)
    pv[valid] = np.where(fit.fittable, fit.wald_p[:, 2], 1.0)
    k = int(np.argmin(pv))
    return k // q, float(thr.reshape(-1)[k]), bonferroni(pv[k], p * q)


def _tree_result(method_id, data, tree: FittedTree) -> MethodResult:
    if not tree.splittable:
        return MethodResult(method_id, het_p=1.0, importance=np.zeros(data.p),
                            note="unsplittable root")
    imp = tree_feature_importance(tree, data.n, data.p)
    return MethodResult(method_id, het_p=tree.root_p, importance=imp,
                        predictor=TreePath(tree, tree.best_leaf().id))


def fit_mob(train: TrialData, rng=None) -> MethodResult:
    return _tree_result("mob", train, _grow(train, mob_split))


def fit_itree(train: TrialData, rng=None) -> MethodResult:
    return _tree_result("itree", train, _grow(train, itree_split))
