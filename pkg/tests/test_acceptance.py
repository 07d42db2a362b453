"""Acceptance criteria 1-10.

Each test prints one ``CRITERION k PASS|FAIL`` line with the measured values
and asserts the same checks. The benchmark scenarios run once per module.
"""
import dataclasses
from collections import defaultdict

import numpy as np
import pytest

from survhte.config import ScenarioSpec, load_scenario
from survhte.dgp import (CENSORING_SCENARIOS, generate_trial, heterogeneity_point, individual_arr,
                         max_arr1, sample_event_time)
from survhte.harness import run_benchmark
from survhte.methods import FittedTree, TreeNode, tree_feature_importance
from survhte.metrics import average_precision
from survhte.survival import fit_cox, kaplan_meier

pytestmark = pytest.mark.slow


def verdict(log, k, checks):
    """checks: list of (label, measured, ok)."""
    ok = all(c[2] for c in checks)
    detail = "; ".join(f"{'' if c[2] else '!'}{c[0]}={c[1]}" for c in checks)
    line = f"CRITERION {k} {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    log.append(line)
    assert ok, line


def table(report, metric):
    """{method: [value per arr point]} in grid order."""
    pts = [p["arr1"] for p in report.metadata["points"]]
    out = defaultdict(lambda: [None] * len(pts))
    for row in report.aggregates:
        if row.metric == metric:
            out[row.method][pts.index(row.arr1)] = row.mean
    return out


def monotone_within(values, slack):
    best = -np.inf
    for v in values:
        if v < best - slack:
            return False
        best = max(best, v)
    return True


def fmt(v):
    return "None" if v is None else f"{v:.3f}"


# --- benchmark runs ---------------------------------------------------------------

@pytest.fixture(scope="module")
def null_run(tmp_path_factory):
    spec = load_scenario("scenarios/null_censored_p20.yaml")
    assert spec.repetitions == 1000 and spec.censoring_scenario == 1
    return run_benchmark(spec, tmp_path_factory.mktemp("null"))


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    spec = load_scenario("scenarios/desk_p20.yaml")
    assert spec.repetitions == 100 and spec.arr_points == 10 and spec.censoring_scenario == 0
    return run_benchmark(spec, tmp_path_factory.mktemp("desk"))


@pytest.fixture(scope="module")
def wide_run(tmp_path_factory):
    spec = load_scenario("scenarios/desk_p100.yaml")
    assert spec.p == 100 and spec.repetitions == 25
    return run_benchmark(spec, tmp_path_factory.mktemp("wide"))


# --- generator criteria -------------------------------------------------------------

def test_criterion_1_calibration(desk_curve, acceptance_log):
    i0 = int(np.argmin(np.abs(desk_curve.beta_grid)))
    tol = 3 / np.sqrt(desk_curve.mc_size)
    a0, a1 = desk_curve.arr0[i0], desk_curve.arr1[i0]
    top = max_arr1(desk_curve)
    verdict(acceptance_log, 1, [
        ("ARR0(0)", f"{a0:.2e}", abs(a0) <= tol),
        ("ARR1(0)", f"{a1:.2e}", abs(a1) <= tol),
        ("isotonic_dev", f"{max(desk_curve.isotonic_violation(0), desk_curve.isotonic_violation(1)):.2e}",
         max(desk_curve.isotonic_violation(0), desk_curve.isotonic_violation(1)) <= tol),
        ("max_ARR1", f"{top:.3f}", 0.40 <= top <= 0.47),
    ])


def test_criterion_2_sampling(acceptance_log):
    t = sample_event_time(np.zeros(1_000_000), np.random.default_rng(2))
    s1 = np.mean(t > 1.0)
    verdict(acceptance_log, 2, [("S(1)", f"{s1:.4f}", abs(s1 - np.exp(-0.5)) <= 0.002)])


def test_criterion_3_null_constraint(desk_config, desk_points, acceptance_log):
    n = 100_000
    checks = []
    for i, pt in enumerate(desk_points):
        x = generate_trial(desk_config, pt, seed=300 + i, n=n).covariates
        m = individual_arr(x, pt.beta0, pt.beta1, desk_config.gamma, desk_config.subgroup,
                           desk_config.baseline_scale).mean()
        checks.append((f"pt{i}", f"{m:.1e}", abs(m) <= 3 / np.sqrt(n)))
    verdict(acceptance_log, 3, checks)


def test_criterion_4_event_rates(desk_config, desk_curve, acceptance_log):
    pt = heterogeneity_point(desk_curve, 0.2)
    checks = []
    for scen, target in ((1, 0.77), (3, 0.36)):
        cfg = dataclasses.replace(desk_config, censoring=CENSORING_SCENARIOS[scen])
        rate = generate_trial(cfg, pt, seed=40 + scen, n=100_000).event.mean()
        checks.append((f"censoring{scen}", f"{rate:.3f}", abs(rate - target) <= 0.03))
    verdict(acceptance_log, 4, checks)


# --- benchmark criteria -------------------------------------------------------------

NULL_BANDS = {
    "univariate_interaction": (0.0, 0.05), "itree": (0.0, 0.05),
    "univariate_ttest": (0.02, 0.09), "multivariate_cox": (0.02, 0.09), "mob": (0.02, 0.09),
    "seqbt": (0.02, 0.09), "ardp": (0.02, 0.09),
    "multivariate_tree": (0.035, 0.065), "sides": (0.08, 1.0),
}


def test_criterion_5_type_one_error(null_run, acceptance_log):
    power = table(null_run, "power")
    checks = []
    for m, (lo, hi) in NULL_BANDS.items():
        v = power[m][0]
        checks.append((m, fmt(v), v is not None and lo <= v <= hi))
    verdict(acceptance_log, 5, checks)


def test_criterion_6_power(desk_run, acceptance_log):
    power = table(desk_run, "power")
    arr = [p["arr1"] for p in desk_run.metadata["points"]]
    top, mid = len(arr) - 1, int(np.argmin(np.abs(np.array(arr) - 0.29)))
    checks = [(f"{m}@{arr[top]:.3f}", fmt(power[m][top]), power[m][top] >= 0.90)
              for m in ("univariate_interaction", "mob", "itree")]
    checks.append((f"oracle@{arr[mid]:.3f}", fmt(power["oracle"][mid]), power["oracle"][mid] >= 0.95))
    for m, curve in sorted(power.items()):
        checks.append((f"monotone_{m}", "[" + ",".join(fmt(v) for v in curve) + "]",
                       monotone_within(curve, 0.10)))
    verdict(acceptance_log, 6, checks)


def test_criterion_7_ranking(desk_run, acceptance_log):
    top = table(desk_run, "top_rank")
    ap = table(desk_run, "average_precision")
    p = desk_run.metadata["scenario"]["p"]
    null_hit = top["univariate_interaction"][0]
    verdict(acceptance_log, 7, [
        ("null_top_rank_uni", fmt(null_hit), abs(null_hit - 4 / p) <= 0.08),
        ("AP_uni@max", fmt(ap["univariate_interaction"][-1]), ap["univariate_interaction"][-1] >= 0.90),
        ("AP_mob@max", fmt(ap["mob"][-1]), ap["mob"][-1] >= 0.65),
    ])


ACCURACY_BANDS = {"itree": (0.66, 0.82), "multivariate_cox": (0.60, 0.76),
                  "multivariate_tree": (0.62, 0.80), "univariate_interaction": (0.53, 0.65)}


def test_criterion_8_accuracy(desk_run, acceptance_log):
    acc = table(desk_run, "accuracy")
    checks = [(m, fmt(acc[m][-1]), acc[m][-1] is not None and lo <= acc[m][-1] <= hi)
              for m, (lo, hi) in ACCURACY_BANDS.items()]
    verdict(acceptance_log, 8, checks)


def _importance_case():
    leaf = lambda i, s, d: TreeNode(i, s, d, leaf_arr=0.0)
    child = TreeNode(1, 50, 1, feature=2, threshold=1.0, p_value=0.1,
                     left=leaf(3, 25, 2), right=leaf(4, 25, 2))
    root = TreeNode(0, 100, 0, feature=2, threshold=0.0, p_value=0.01, left=child, right=leaf(2, 50, 1))
    single = FittedTree(root, [root, child], 100)
    return tree_feature_importance(single, 100, 4)


def _ap_bruteforce_ok():
    import itertools
    for p in range(1, 5):
        for labels in itertools.product((0, 1), repeat=p):
            if not any(labels):
                continue
            for perm in itertools.permutations(range(p)):
                order = sorted(range(p), key=lambda i: (-perm[i], i))
                tp, area, prev = 0, 0.0, 0.0
                for k, i in enumerate(order, 1):
                    tp += labels[i]
                    rec = tp / sum(labels)
                    area += (rec - prev) * tp / k
                    prev = rec
                if abs(average_precision(perm, labels) - area) > 1e-12:
                    return False
    return True


def test_criterion_9_properties(desk_curve, tmp_path, acceptance_log):
    rng = np.random.default_rng(9)
    imp = _importance_case()
    t = rng.exponential(size=300)
    km = kaplan_meier(t, np.ones(300, dtype=int))
    ecdf = 1 - np.searchsorted(np.sort(t), km.times, side="right") / 300
    n = 10_000
    w = rng.integers(0, 2, n)
    coef = fit_cox(w[:, None], rng.exponential(1 / np.where(w == 1, 2.0, 1.0)), np.ones(n)).coefficients[0]
    spec = ScenarioSpec(n=200, arr_points=2, repetitions=2, base_seed=3)
    a = run_benchmark(spec, tmp_path / "w1", workers=1, calibration=desk_curve).records
    b = run_benchmark(spec, tmp_path / "w2", workers=2, calibration=desk_curve).records
    same = [dataclasses.replace(r, fit_seconds=0) for r in a] == [dataclasses.replace(r, fit_seconds=0) for r in b]
    verdict(acceptance_log, 9, [
        ("tree_importance", f"{imp[2]:.1f}", abs(imp[2] - 105.0) < 1e-9 and np.count_nonzero(imp) == 1),
        ("AP_bruteforce", "all<=4", _ap_bruteforce_ok()),
        ("KM_vs_ECDF", f"{np.max(np.abs(km.survival - ecdf)):.1e}", np.allclose(km.survival, ecdf)),
        ("cox_ln2", f"{coef:.3f}", abs(coef - np.log(2)) <= 0.05),
        ("workers_1_vs_2", str(same), same),
    ])


def test_criterion_10_wide(wide_run, acceptance_log):
    power = table(wide_run, "power")
    checks = [(f"monotone_{m}", "[" + ",".join(fmt(v) for v in c) + "]", monotone_within(c, 0.10))
              for m, c in sorted(power.items())]
    null_uni = power["univariate_interaction"][0]
    checks.append(("null_uni", fmt(null_uni), null_uni <= 0.05))
    verdict(acceptance_log, 10, checks)
