import csv
import dataclasses
import json
import statistics
from collections import defaultdict

import numpy as np
import pytest

from survhte.cli import main
from survhte.config import ConfigError, ScenarioSpec, load_scenario, repetition_seed, splitmix64, stream
from survhte.dgp import (HeterogeneityPoint, heterogeneity_point, individual_arr, load_calibration,
                         load_trial, save_calibration)
from survhte.harness import read_records, run_benchmark, run_repetition
from survhte.metrics import read_aggregate

FAST = ("univariate_interaction", "univariate_ttest", "multivariate_cox", "mob", "ardp", "oracle")


def strip_time(records):
    return [dataclasses.replace(r, fit_seconds=0.0) for r in records]


@pytest.fixture(scope="module")
def small_spec():
    return ScenarioSpec(name="small", n=200, validation_n=200, arr_points=2, repetitions=3,
                        methods=FAST, base_seed=7)


@pytest.fixture(scope="module")
def calib_file(tmp_path_factory, desk_curve):
    path = tmp_path_factory.mktemp("cal") / "cal.csv"
    save_calibration(desk_curve, path)
    return path


def write_yaml(path, text):
    path.write_text(text)
    return path


# --- config and seeds -----------------------------------------------------------

def test_scenario_roundtrip():
    spec = load_scenario("scenarios/desk_p20.yaml")
    assert spec.p == 20 and spec.predictive_set == [16, 17, 18, 19] and spec.repetitions == 100


@pytest.mark.parametrize("text,line,fragment", [
    ("p: 20\nbogus: 1\n", 2, "unknown key"),
    ("p: 20\np: 30\n", 2, "duplicate"),
    ("n: 500\nmethods:\n  a: 1\n", 2, "nested"),
])
def test_config_errors_name_the_line(tmp_path, text, line, fragment):
    with pytest.raises(ConfigError, match=rf":{line}: .*{fragment}"):
        load_scenario(write_yaml(tmp_path / "s.yaml", text))


@pytest.mark.parametrize("kw", [dict(train_fraction=1.0), dict(repetitions=0), dict(methods=()),
                                dict(methods=("nope",)), dict(subgroup_vars=(0,)),
                                dict(censoring_scenario=7), dict(gamma=(1.0,))])
def test_spec_invariants(kw):
    with pytest.raises(ConfigError):
        ScenarioSpec(**kw)


def test_seed_scheme():
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    seeds = {repetition_seed(1, i, r) for i in range(10) for r in range(100)}
    assert len(seeds) == 1000
    assert repetition_seed(1, 2, 3) == repetition_seed(1, 2, 3) != repetition_seed(1, 3, 2)
    a = np.random.default_rng(stream(5, "discovery")).random()
    b = np.random.default_rng(stream(5, "validation")).random()
    assert a != b


# --- repetition protocol --------------------------------------------------------

def test_run_repetition_deterministic(small_spec, desk_points):
    config = small_spec.generator_config()
    a = run_repetition(small_spec, config, desk_points[-1], 9, 4)
    b = run_repetition(small_spec, config, desk_points[-1], 9, 4)
    assert strip_time(a) == strip_time(b)
    assert [r.method for r in a] == list(FAST)
    assert all(r.fit_seconds > 0 for r in a)


def test_method_failure_is_recorded(desk_points):
    spec = ScenarioSpec(n=60, methods=("ardp", "univariate_interaction"))
    recs = run_repetition(spec, spec.generator_config(), desk_points[0], 0, 0)
    assert recs[0].error.startswith("ValueError") and recs[0].het_p is None
    assert not recs[1].error


@pytest.fixture(scope="module")
def serial_run(small_spec, desk_curve, tmp_path_factory):
    out = tmp_path_factory.mktemp("serial")
    return out, run_benchmark(small_spec, out, workers=1, calibration=desk_curve)


def test_cardinality_and_outputs(serial_run, small_spec):
    out, report = serial_run
    assert len(report.records) == 2 * 3 * len(FAST)
    assert len({r.key() for r in report.records}) == len(report.records)
    header = (out / "records.csv").read_text().splitlines()[0]
    assert header == "scenario,arr1,rep,method,het_p,degenerate,top_var,accuracy,fit_seconds,rule"
    assert (out / "importance.csv").read_text().startswith("scenario,arr1,rep,method,var_index,score")
    assert strip_time(read_records(out / "records.csv")) == strip_time(report.records)


def test_single_record(desk_curve, tmp_path):
    spec = ScenarioSpec(n=200, arr_points=1, repetitions=1, methods=("mob",))
    assert len(run_benchmark(spec, tmp_path, calibration=desk_curve).records) == 1


def test_workers_do_not_change_records(serial_run, small_spec, desk_curve, tmp_path):
    out, report = serial_run
    par = run_benchmark(small_spec, tmp_path, workers=2, calibration=desk_curve)
    assert strip_time(par.records) == strip_time(report.records)
    drop = lambda p: [{k: v for k, v in r.items() if k != "fit_seconds"}
                      for r in csv.DictReader(open(p))]
    assert drop(tmp_path / "records.csv") == drop(out / "records.csv")
    assert (tmp_path / "importance.csv").read_text() == (out / "importance.csv").read_text()


def test_resume_matches_uninterrupted(serial_run, small_spec, desk_curve, tmp_path):
    _, full = serial_run
    run_benchmark(small_spec, tmp_path, calibration=desk_curve, reps=1)
    resumed = run_benchmark(small_spec, tmp_path, calibration=desk_curve, resume=True)
    assert strip_time(resumed.records) == strip_time(full.records)
    assert len(read_records(tmp_path / "records.csv")) == len(full.records)


def test_seed_ledger_regenerates_a_repetition(serial_run, small_spec):
    out, report = serial_run
    meta = json.loads((out / "metadata.json").read_text())
    entry = meta["seeds"][4]
    assert entry["seed"] == repetition_seed(small_spec.base_seed, entry["arr_index"], entry["rep"])
    pt = HeterogeneityPoint(**{k: meta["points"][entry["arr_index"]][k2]
                               for k, k2 in (("arr1_target", "arr1"), ("arr0_target", "arr0"),
                                             ("beta1", "beta1"), ("beta0", "beta0"))})
    again = run_repetition(small_spec, small_spec.generator_config(), pt, entry["arr_index"], entry["rep"])
    orig = [r for r in report.records if r.arr1 == pt.arr1_target and r.rep == entry["rep"]]
    assert strip_time(again) == strip_time(orig)


def test_aggregate_recomputed_independently(serial_run):
    out, _ = serial_run
    groups = defaultdict(lambda: defaultdict(list))
    with open(out / "records.csv") as fh:
        for d in csv.DictReader(fh):
            g = groups[(d["arr1"], d["method"])]
            if d["het_p"]:
                g["power"].append(1.0 if float(d["het_p"]) < 0.05 else 0.0)
            if d["accuracy"]:
                g["accuracy"].append(float(d["accuracy"]))
            if d["top_var"]:
                g["top_rank"].append(1.0 if int(d["top_var"]) in (17, 18, 19, 20) else 0.0)
    rows = read_aggregate(out / "aggregate.csv")
    checked = 0
    for row in rows:
        vals = groups[(repr(row.arr1), row.method)].get(row.metric)
        if vals is None:
            continue
        if row.metric == "top_rank":
            vals = vals + [0.0] * (row.count - len(vals))  # all-zero importance: a miss
        assert row.count == len(vals)
        assert row.mean == pytest.approx(statistics.fmean(vals), rel=1e-12, abs=1e-15)
        checked += 1
    assert checked >= 20


def test_p_guard(desk_curve):
    spec = ScenarioSpec(p=100, subgroup_vars=(97, 98, 99, 100), methods=("sides",))
    with pytest.raises(ConfigError, match="--force"):
        run_benchmark(spec, "/tmp/never")


def test_fit_durations_logged(serial_run):
    _, report = serial_run
    assert all(r.fit_seconds > 0 for r in report.records)


@pytest.mark.xfail(reason="rule searches are vectorized here; not an order of magnitude slower",
                   strict=False)
def test_rule_searches_much_slower(desk_points):
    spec = ScenarioSpec(methods=("sides", "seqbt", "mob", "multivariate_tree"))
    config = spec.generator_config()
    t = defaultdict(float)
    for rep in range(3):
        for r in run_repetition(spec, config, desk_points[5], 5, rep):
            t[r.method] += r.fit_seconds
    assert min(t["sides"], t["seqbt"]) >= 10 * max(t["mob"], t["multivariate_tree"])


# --- command line ---------------------------------------------------------------

def test_cli_pipeline(tmp_path, calib_file):
    scen = write_yaml(tmp_path / "s.yaml",
                      "name: cli\nn: 150\narr_points: 2\nrepetitions: 2\n"
                      "methods: [univariate_interaction, oracle]\n")
    assert main(["generate", "--scenario", str(scen), "--calibration", str(calib_file),
                 "--arr1", "0", "--seed", "3", "--n", "100000", "--out", str(tmp_path / "d.csv")]) == 0
    data = load_trial(tmp_path / "d.csv")
    assert data.n == 100_000 and set(np.unique(data.true_subgroup)) == {0, 1}
    assert main(["run", "--scenario", str(scen), "--calibration", str(calib_file),
                 "--out-dir", str(tmp_path / "r")]) == 0
    assert main(["report", "--records", str(tmp_path / "r" / "records.csv"),
                 "--out", str(tmp_path / "agg.csv")]) == 0
    for metric in ("power", "average_precision", "accuracy"):
        assert (tmp_path / f"agg_{metric}.csv").exists()


def test_cli_generate_null_point(tmp_path, calib_file, desk_config):
    scen = write_yaml(tmp_path / "s.yaml", "n: 500\n")
    n = 100_000
    assert main(["generate", "--scenario", str(scen), "--calibration", str(calib_file),
                 "--arr1", "0", "--seed", "1", "--n", str(n), "--out", str(tmp_path / "d.csv")]) == 0
    data = load_trial(tmp_path / "d.csv")
    pt = heterogeneity_point(load_calibration(calib_file), 0.0)
    arr = individual_arr(data.covariates, pt.beta0, pt.beta1, desk_config.gamma,
                         desk_config.subgroup, desk_config.baseline_scale)
    assert abs(arr.mean()) <= 3 / np.sqrt(n)


def test_cli_config_error_exit(tmp_path, calib_file, capsys):
    bad = write_yaml(tmp_path / "bad.yaml", "n: 500\nwhat: 3\n")
    assert main(["run", "--scenario", str(bad)]) == 2
    assert "bad.yaml:2" in capsys.readouterr().err
    assert main(["run", "--scenario", str(tmp_path / "missing.yaml")]) == 2


def test_cli_failure_threshold_exit(tmp_path, calib_file):
    scen = write_yaml(tmp_path / "s.yaml", "n: 60\narr_points: 1\nrepetitions: 2\nmethods: [ardp]\n")
    assert main(["run", "--scenario", str(scen), "--calibration", str(calib_file),
                 "--out-dir", str(tmp_path / "r")]) == 3


def test_report_of_half_rejections(tmp_path):
    with open(tmp_path / "records.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "arr1", "rep", "method", "het_p", "degenerate", "top_var",
                    "accuracy", "fit_seconds", "rule"])
        for r in range(100):
            w.writerow(["s", "0.3", r, "m", 0.01 if r < 50 else 0.7, 0, "", "", 0.1, ""])
    assert main(["report", "--records", str(tmp_path / "records.csv"), "--predictive", "1",
                 "--out", str(tmp_path / "agg.csv")]) == 0
    row = [r for r in read_aggregate(tmp_path / "agg.csv") if r.metric == "power"][0]
    assert row.mean == 0.5 and round(row.half_width, 3) == 0.098 and row.count == 100
