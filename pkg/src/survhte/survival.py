"""Survival-analysis numerics shared by the generator and every method.

Cox regression is fitted by a batched Newton-Raphson solver so that the many
small candidate models evaluated by the tree and rule searches (hundreds per
node) share one time ordering and run as a single vectorized computation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.stats import mstats

P_FLOOR = 1e-300


@dataclass(frozen=True)
class TrialData:
    covariates: np.ndarray
    treatment: np.ndarray
    time: np.ndarray
    event: np.ndarray
    true_subgroup: np.ndarray | None = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        n = x.shape[0]
        w = np.asarray(self.treatment, dtype=int)
        t = np.asarray(self.time, dtype=float)
        e = np.asarray(self.event, dtype=int)
        if not (len(w) == len(t) == len(e) == n):
            raise ValueError("all columns must have the same length")
        if np.any(t <= 0):
            raise ValueError("observed times must be strictly positive")
        if np.any((w != 0) & (w != 1)) or np.any((e != 0) & (e != 1)):
            raise ValueError("treatment and event flags must be 0/1")
        g = self.true_subgroup
        if g is not None:
            g = np.asarray(g, dtype=int)
            if len(g) != n:
                raise ValueError("true_subgroup length mismatch")
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "treatment", w)
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "event", e)
        object.__setattr__(self, "true_subgroup", g)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def subset(self, idx) -> "TrialData":
        g = None if self.true_subgroup is None else self.true_subgroup[idx]
        return TrialData(self.covariates[idx], self.treatment[idx],
                         self.time[idx], self.event[idx], g)


@dataclass(frozen=True)
class SurvivalCurve:
    """Right-continuous step function; 1 before the first time."""
    times: np.ndarray
    survival: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        vals = np.concatenate([[1.0], self.survival])
        return vals[idx + 1]


@dataclass(frozen=True)
class CoxFit:
    coefficients: np.ndarray
    covariance: np.ndarray
    wald_p: np.ndarray
    baseline_times: np.ndarray
    baseline_cumhaz: np.ndarray
    converged: bool
    ridge: float
    loglik: float = float("nan")

    def cumulative_baseline(self, t):
        """Breslow cumulative baseline hazard; constant past the last event."""
        idx = np.searchsorted(self.baseline_times, np.asarray(t, dtype=float), side="right") - 1
        vals = np.concatenate([[0.0], self.baseline_cumhaz])
        return vals[idx + 1]

    @property
    def z(self) -> np.ndarray:
        se = np.sqrt(np.clip(np.diag(self.covariance), 0, None))
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(se > 0, self.coefficients / se, 0.0)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    degenerate: bool
    group_summaries: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class


@dataclass
class BatchCoxFit:
    """Fits of K designs sharing the same outcome; arrays lead with K."""
    coefficients: np.ndarray
    covariance: np.ndarray
    wald_p: np.ndarray
    loglik: np.ndarray
    converged: np.ndarray
    fittable: np.ndarray

    @property
    def z(self) -> np.ndarray:
        se = np.sqrt(np.clip(np.diagonal(self.covariance, axis1=1, axis2=2), 0, None))
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(se > 0, self.coefficients / se, 0.0)


class _RiskSets:
    """Descending time ordering and tie structure reused across Newton steps."""

    def __init__(self, time, event):
        time = np.asarray(time, dtype=float)
        self.order = np.argsort(-time, kind="mergesort")
        st = time[self.order]
        self.sorted_time = st
        self.event = np.asarray(event, dtype=float)[self.order]
        neg = -st
        # Breslow: the risk set of a tied event time includes all of its ties
        self.last = np.searchsorted(neg, neg, side="right") - 1
        self.first = np.searchsorted(neg, neg, side="left")
        self.ev_idx = np.flatnonzero(self.event > 0)
        self.ev_last = self.last[self.ev_idx]


def _loglik_grad_hess(beta, X, w, rs, pen, need_hess=True):
    # X sorted (K,n,q), w (K,n), beta (K,q), pen (K,q) = n_k * ridge_j
    eta = (X @ beta[:, :, None])[:, :, 0]
    shift = np.max(np.where(w > 0, eta, -np.inf), axis=1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    r = w * np.exp(eta - shift)
    S0 = np.cumsum(r, axis=1)[:, rs.ev_last]
    wd = w[:, rs.ev_idx] * rs.event[rs.ev_idx]
    with np.errstate(divide="ignore", invalid="ignore"):
        logS0 = np.log(S0) + shift
        ll_terms = np.where(wd > 0, wd * (eta[:, rs.ev_idx] - logS0), 0.0)
    ll = ll_terms.sum(axis=1) - 0.5 * np.sum(pen * beta**2, axis=1)
    rX = r[:, :, None] * X
    S1 = np.cumsum(rX, axis=1)[:, rs.ev_last, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        xbar = np.where(S0[:, :, None] > 0, S1 / S0[:, :, None], 0.0)
        inc = np.where(wd > 0, wd / S0, 0.0)
    grad = (wd[:, None, :] @ (X[:, rs.ev_idx, :] - xbar))[:, 0, :] - pen * beta
    if not need_hess:
        return ll, grad, None
    # sum_m wd_m S2_m / S0_m = sum_i c_i r_i x_i x_i' with c_i the Breslow
    # increments accumulated over event times <= t_i
    a = np.zeros_like(r)
    a[:, rs.ev_idx] = inc
    c = np.flip(np.cumsum(np.flip(a, axis=1), axis=1), axis=1)[:, rs.first]
    info = np.swapaxes((c * r)[:, :, None] * X, 1, 2) @ X
    info -= np.swapaxes(wd[:, :, None] * xbar, 1, 2) @ xbar
    info = info + pen[:, :, None] * np.eye(X.shape[2])[None]
    return ll, grad, info


def _solve(A, b):
    try:
        return np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return np.stack([np.linalg.lstsq(a, v, rcond=None)[0] for a, v in zip(A, b)])


def _inverse(A):
    try:
        return np.linalg.inv(A)
    except np.linalg.LinAlgError:
        return np.stack([np.linalg.pinv(a) for a in A])


def fit_cox_batch(X, time, event, weights=None, ridge=0.0, unpenalized_mask=None,
                  tol=1e-7, max_iter=100) -> BatchCoxFit:
    """Fit K Cox models with a common outcome.

    X is (K, n, q) or (n, q); weights (K, n) restricts each design to a subset
    of rows (0/1 case weights). The objective is the Breslow partial
    log-likelihood minus ``0.5 * ridge * n_k * ||beta_penalized||^2`` where
    n_k is the weighted sample size of design k.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    K, n, q = X.shape
    rs = _RiskSets(time, event)
    X = X[:, rs.order, :]
    if weights is None:
        w = np.ones((K, n))
    else:
        w = np.broadcast_to(np.asarray(weights, dtype=float), (K, n))[:, rs.order].copy()
    nk = w.sum(axis=1)
    events_k = (w * rs.event).sum(axis=1)
    fittable = events_k > 0

    # Constant columns (within each design's rows) are not identifiable: zero
    # them out so they keep coefficient 0 and report p = 1.
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.einsum("kn,knq->kq", w, X) / np.maximum(nk, 1)[:, None]
        var = np.einsum("kn,knq->kq", w, (X - mean[:, None, :]) ** 2)
    const = var <= 1e-12 * np.maximum(1.0, np.abs(mean)) ** 2 * np.maximum(nk, 1)[:, None]
    X = np.where(const[:, None, :], 0.0, X)

    ridge = np.broadcast_to(np.asarray(ridge, dtype=float), (q,))
    if unpenalized_mask is not None:
        ridge = np.where(np.asarray(unpenalized_mask, dtype=bool), 0.0, ridge)
    pen = nk[:, None] * ridge[None, :]
    fix = np.where(const, 1.0, 0.0)

    beta = np.zeros((K, q))
    ll, grad, info = _loglik_grad_hess(beta, X, w, rs, pen)
    converged = np.zeros(K, dtype=bool)
    for _ in range(max_iter):
        converged = ~fittable | (np.max(np.abs(grad), axis=1) < tol)
        if converged.all():
            break
        active = ~converged
        step = _solve(info[active] + fix[active][:, :, None] * np.eye(q), grad[active])
        b_act, X_act, w_act, pen_act = beta[active], X[active], w[active], pen[active]
        ll_act = ll[active]
        scale = np.ones(len(step))
        for _half in range(30):
            cand = b_act + scale[:, None] * step
            ll_new, _, _ = _loglik_grad_hess(cand, X_act, w_act, rs, pen_act, need_hess=False)
            bad = ~(ll_new >= ll_act - 1e-12 * np.abs(ll_act)) & ~np.isnan(ll_act)
            bad |= ~np.isfinite(ll_new)
            if not bad.any():
                break
            scale = np.where(bad, scale * 0.5, scale)
        beta[active] = b_act + scale[:, None] * step
        ll[active], grad[active], info[active] = _loglik_grad_hess(
            beta[active], X_act, w_act, rs, pen_act)
        if np.all(scale[:, None] * np.abs(step) < 1e-14):
            converged = ~fittable | (np.max(np.abs(grad), axis=1) < tol)
            break
    else:
        converged = ~fittable | (np.max(np.abs(grad), axis=1) < tol)

    cov = _inverse(info + fix[:, :, None] * np.eye(q))
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    cov = np.where(const[:, :, None] | const[:, None, :], 0.0, cov)
    se = np.sqrt(np.clip(np.diagonal(cov, axis1=1, axis2=2), 0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, beta / se, 0.0)
    pval = np.clip(2 * stats.norm.sf(np.abs(z)), 0.0, 1.0)
    pval = np.where(const | ~fittable[:, None], 1.0, pval)
    beta = np.where(fittable[:, None], beta, 0.0)
    return BatchCoxFit(beta, cov, pval, ll, converged & fittable, fittable)


def fit_cox(data, time, event, ridge=0.0, unpenalized_mask=None) -> CoxFit:
    """Ridge-penalized Cox regression with Breslow ties and Wald p-values."""
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    if X.shape[0] < 2:
        raise ValueError("need at least two observations")
    if event.sum() == 0:
        raise ValueError("no events")
    res = fit_cox_batch(X, time, event, ridge=ridge, unpenalized_mask=unpenalized_mask)
    beta = res.coefficients[0]
    bt, bh = breslow_baseline(X @ beta, time, event)
    return CoxFit(beta, res.covariance[0], res.wald_p[0], bt, bh,
                  bool(res.converged[0]), float(np.max(np.atleast_1d(ridge))),
                  float(res.loglik[0]))


def breslow_baseline(lp, time, event):
    """Breslow cumulative baseline hazard at the distinct event times."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    r = np.exp(np.asarray(lp, dtype=float))
    ev_times, inv = np.unique(time[event == 1], return_inverse=True)
    d = np.bincount(inv, minlength=len(ev_times)).astype(float)
    order = np.argsort(time)
    tail = np.cumsum(r[order][::-1])[::-1]
    first = np.searchsorted(time[order], ev_times, side="left")
    return ev_times, np.cumsum(d / tail[first])


def cox_loglik(beta, data, time, event, ridge=0.0, unpenalized_mask=None) -> float:
    """Penalized partial log-likelihood at ``beta`` (same objective as fit_cox)."""
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    q = X.shape[1]
    rs = _RiskSets(time, event)
    ridge = np.broadcast_to(np.asarray(ridge, dtype=float), (q,))
    if unpenalized_mask is not None:
        ridge = np.where(np.asarray(unpenalized_mask, dtype=bool), 0.0, ridge)
    pen = X.shape[0] * ridge[None, :]
    ll, _, _ = _loglik_grad_hess(np.asarray(beta, dtype=float)[None], X[rs.order][None],
                                 np.ones((1, X.shape[0])), rs, pen, need_hess=False)
    return float(ll[0])


def predict_survival(fit: CoxFit, x, t):
    """exp(-Lambda0(t) * exp(beta'x)); rows of ``x`` broadcast against ``t``."""
    lp = np.asarray(x, dtype=float) @ fit.coefficients
    return np.exp(-fit.cumulative_baseline(t) * np.exp(lp))


def kaplan_meier(time, event) -> SurvivalCurve:
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    ev_times = np.unique(time[event == 1])
    if len(ev_times) == 0:
        return SurvivalCurve(np.empty(0), np.empty(0))
    st = np.sort(time)
    at_risk = len(st) - np.searchsorted(st, ev_times, side="left")
    d = np.bincount(np.searchsorted(ev_times, time[event == 1]), minlength=len(ev_times))
    return SurvivalCurve(ev_times, np.cumprod(1.0 - d / at_risk))


def km_arr(time, event, treatment, t=1.0) -> float:
    """KM survival difference (treated minus control) at ``t``; 0 if an arm is empty."""
    treatment = np.asarray(treatment)
    if treatment.min(initial=1) == treatment.max(initial=0):
        return 0.0
    s1 = kaplan_meier(time[treatment == 1], event[treatment == 1])(t)
    s0 = kaplan_meier(time[treatment == 0], event[treatment == 0])(t)
    return float(s1 - s0)


def logrank_test(time, event, group):
    """Two-sample log-rank test; returns (O - E for group 1, chi2 statistic, p)."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    group = np.asarray(group, dtype=int)
    ev_times = np.unique(time[event == 1])
    st = np.sort(time)
    st1 = np.sort(time[group == 1])
    Y = len(st) - np.searchsorted(st, ev_times, side="left")
    Y1 = len(st1) - np.searchsorted(st1, ev_times, side="left")
    idx = np.searchsorted(ev_times, time[event == 1])
    d = np.bincount(idx, minlength=len(ev_times)).astype(float)
    d1 = np.bincount(idx, weights=group[event == 1], minlength=len(ev_times))
    oe = np.sum(d1 - Y1 * d / Y)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(Y > 1, (Y1 / Y) * (1 - Y1 / Y) * (Y - d) / (Y - 1) * d, 0.0)
    var = v.sum()
    chi2 = oe**2 / var if var > 0 else 0.0
    return float(oe), float(chi2), float(stats.chi2.sf(chi2, 1))


def median_variance(u) -> float:
    """Per-observation variance of the sample median: n * SE^2 (Maritz-Jarrett)."""
    u = np.asarray(u, dtype=float)
    se = float(mstats.mjci(u, prob=[0.5])[0])
    return len(u) * se * se


def diff_in_diff_test(data: TrialData, predicted_subgroup, rng) -> TestResult:
    """Difference-in-differences of median observed times between two subgroups.

    z = [(m01 - m00) - (m11 - m10)] / sqrt(sum s2_ij / n_ij) where m_ij is the
    median observed time in subgroup i, arm j, and s2_ij / n_ij is the
    Maritz-Jarrett variance of that median. Cells with fewer than two
    observations leave the statistic undefined and the p-value is drawn
    uniformly from ``rng``.
    """
    g = np.asarray(predicted_subgroup, dtype=int)
    if len(g) != data.n:
        raise ValueError("predicted_subgroup must have length n")
    cells = {}
    for i in (0, 1):
        for j in (0, 1):
            u = data.time[(g == i) & (data.treatment == j)]
            if len(u) < 2:
                cells[(i, j)] = (float("nan"), float("nan"), len(u))
            else:
                cells[(i, j)] = (float(np.median(u)), median_variance(u), len(u))
    if any(c[2] < 2 for c in cells.values()):
        return TestResult(float("nan"), float(rng.uniform(0.0, 1.0)), True, cells)
    z = did_statistic(cells)
    return TestResult(z, float(2 * stats.norm.sf(abs(z))), False, cells)


def did_statistic(cells) -> float:
    """z from {(i, j): (median, variance, count)} cell summaries."""
    mu = {k: c[0] for k, c in cells.items()}
    num = (mu[0, 1] - mu[0, 0]) - (mu[1, 1] - mu[1, 0])
    den = np.sqrt(sum(c[1] / c[2] for c in cells.values()))
    if den == 0:
        return 0.0 if num == 0 else float(np.sign(num) * np.inf)
    return float(num / den)


def cox_score_residuals(X, time, event, beta) -> np.ndarray:
    """Per-observation score contributions (n, q) of a Breslow Cox fit.

    They sum to the score vector, which is zero at the unpenalized MLE.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    r = np.exp(X @ np.asarray(beta, dtype=float))
    order = np.argsort(time, kind="mergesort")
    st = time[order]
    tail0 = np.cumsum(r[order][::-1])[::-1]
    tail1 = np.cumsum((r[:, None] * X)[order][::-1], axis=0)[::-1]
    ev_times, d = np.unique(time[event == 1], return_counts=True)
    first = np.searchsorted(st, ev_times, side="left")
    S0, xbar = tail0[first], tail1[first] / tail0[first][:, None]
    dH = d / S0
    H = np.cumsum(dH)
    A = np.cumsum(dH[:, None] * xbar, axis=0)
    # events with time <= t_i
    k = np.searchsorted(ev_times, time, side="right") - 1
    Hi = np.where(k >= 0, H[np.maximum(k, 0)], 0.0)
    Ai = np.where(k[:, None] >= 0, A[np.maximum(k, 0)], 0.0)
    own = np.searchsorted(ev_times, time)
    own = np.minimum(own, len(ev_times) - 1)
    xbar_i = xbar[own]
    resid = event[:, None] * (X - xbar_i)
    return resid - r[:, None] * (X * Hi[:, None] - Ai)
