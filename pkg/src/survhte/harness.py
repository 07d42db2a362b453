"""Repetition protocol and seeded benchmark runner.

Each (arr point, repetition) pair owns a seed derived from the scenario's base
seed, so a repetition can be regenerated alone and results do not depend on
the number of workers. Records are appended as repetitions finish, which is
what ``resume`` reads back.
"""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioSpec, repetition_seed, stream
from .dgp import (CalibrationCurve, HeterogeneityPoint, arr_grid, calibrate, generate_trial,
                  load_calibration, save_calibration)
from .methods import METHODS, held_out_pvalue, run_method
from .methods.base import top_variable
from .metrics import (AggregateRow, RepetitionRecord, aggregate, classification_accuracy,
                      write_aggregate)

RECORD_FIELDS = ("scenario", "arr1", "rep", "method", "het_p", "degenerate", "top_var",
                 "accuracy", "fit_seconds", "rule")
IMPORTANCE_FIELDS = ("scenario", "arr1", "rep", "method", "var_index", "score")
RECORDS_FILE = "records.csv"
IMPORTANCE_FILE = "importance.csv"
ERRORS_FILE = "errors.csv"
AGGREGATE_FILE = "aggregate.csv"
METADATA_FILE = "metadata.json"
ERROR_THRESHOLD = 0.10


def _fmt(v):
    return "" if v is None else repr(float(v))


def run_repetition(spec: ScenarioSpec, config, point: HeterogeneityPoint, arr_index, rep,
                   methods=None) -> list[RepetitionRecord]:
    methods = spec.methods if methods is None else methods
    seed = repetition_seed(spec.base_seed, arr_index, rep)
    discovery = generate_trial(config, point, stream(seed, "discovery"), n=spec.n)
    validation = generate_trial(config, point, stream(seed, "validation"), n=spec.validation_size)
    # rows are iid, so a contiguous split is a random split
    n_train = int(round(spec.train_fraction * spec.n))
    train = discovery.subset(np.arange(n_train))
    test = discovery.subset(np.arange(n_train, spec.n))
    out = []
    for mid in methods:
        m = METHODS[mid]
        rng = np.random.default_rng(stream(seed, "method:" + mid))
        kw = {"subgroup": config.subgroup} if mid == "oracle" else {}
        base = dict(scenario=spec.name, arr1=point.arr1_target, rep=rep, method=mid)
        try:
            res = run_method(mid, discovery if m.in_fit else train, rng, **kw)
            if m.in_fit:
                het_p, degen = res.het_p, res.het_degenerate
            else:
                test_rng = np.random.default_rng(stream(seed, "test:" + mid))
                het_p, degen = held_out_pvalue(res, test, test_rng)
            imp = None if res.importance is None else tuple(float(v) for v in res.importance)
            top = None
            if imp is not None and any(v > 0 for v in imp):
                top = top_variable(imp)
            out.append(RepetitionRecord(
                **base, het_p=het_p, degenerate=bool(degen), top_var=top, importance=imp,
                accuracy=classification_accuracy(res.predictor, validation),
                fit_seconds=res.fit_seconds,
                rule="" if res.predictor is None else res.predictor.describe()))
        except Exception as exc:  # a failing method must not stop the run
            out.append(RepetitionRecord(**base, error=f"{type(exc).__name__}: {exc}"))
    return out


# --- record files ----------------------------------------------------------

def _record_row(r: RepetitionRecord) -> dict:
    return {"scenario": r.scenario, "arr1": _fmt(r.arr1), "rep": r.rep, "method": r.method,
            "het_p": _fmt(r.het_p), "degenerate": int(r.degenerate),
            "top_var": "" if r.top_var is None else r.top_var + 1,
            "accuracy": _fmt(r.accuracy), "fit_seconds": _fmt(r.fit_seconds), "rule": r.rule}


class RecordWriter:
    """Appends records, importance rows and error notes to the output directory."""

    def __init__(self, out_dir, append=False):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        mode = "a" if append else "w"
        self._files = []
        self.rec = self._open(RECORDS_FILE, RECORD_FIELDS, mode)
        self.imp = self._open(IMPORTANCE_FILE, IMPORTANCE_FIELDS, mode)
        self.err = self._open(ERRORS_FILE, ("scenario", "arr1", "rep", "method", "error"), mode)

    def _open(self, name, fields, mode):
        path = self.dir / name
        fresh = mode == "w" or not path.exists() or path.stat().st_size == 0
        fh = open(path, mode, newline="")
        self._files.append(fh)
        w = csv.DictWriter(fh, fieldnames=fields)
        if fresh:
            w.writeheader()
        return w

    def write(self, records):
        for r in records:
            self.rec.writerow(_record_row(r))
            if r.importance is not None:
                for j, s in enumerate(r.importance):
                    self.imp.writerow({"scenario": r.scenario, "arr1": _fmt(r.arr1), "rep": r.rep,
                                       "method": r.method, "var_index": j + 1, "score": repr(s)})
            if r.error:
                self.err.writerow({"scenario": r.scenario, "arr1": _fmt(r.arr1), "rep": r.rep,
                                   "method": r.method, "error": r.error})
        for fh in self._files:
            fh.flush()

    def close(self):
        for fh in self._files:
            fh.close()


def read_records(records_path, importance_path=None, errors_path=None) -> list[RepetitionRecord]:
    """Rebuild records from the CSVs; sibling importance/error files are found by default."""
    records_path = Path(records_path)
    if importance_path is None:
        importance_path = records_path.with_name(IMPORTANCE_FILE)
    if errors_path is None:
        errors_path = records_path.with_name(ERRORS_FILE)
    key = lambda d: (d["scenario"], float(d["arr1"]), int(d["rep"]), d["method"])
    imps: dict = {}
    if Path(importance_path).exists():
        with open(importance_path, newline="") as fh:
            for d in csv.DictReader(fh):
                imps.setdefault(key(d), {})[int(d["var_index"]) - 1] = float(d["score"])
    errs = {}
    if Path(errors_path).exists():
        with open(errors_path, newline="") as fh:
            errs = {key(d): d["error"] for d in csv.DictReader(fh)}
    out = []
    with open(records_path, newline="") as fh:
        for d in csv.DictReader(fh):
            k = key(d)
            imp = imps.get(k)
            opt = lambda s, f=float: None if s == "" else f(s)
            out.append(RepetitionRecord(
                scenario=k[0], arr1=k[1], rep=k[2], method=k[3], het_p=opt(d["het_p"]),
                degenerate=bool(int(d["degenerate"])),
                top_var=None if d["top_var"] == "" else int(d["top_var"]) - 1,
                importance=None if imp is None else tuple(imp[j] for j in range(len(imp))),
                accuracy=opt(d["accuracy"]), fit_seconds=float(d["fit_seconds"] or 0.0),
                rule=d["rule"], error=errs.get(k, "")))
    return out


# --- benchmark -------------------------------------------------------------

@dataclass
class BenchmarkReport:
    records: list
    aggregates: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def error_fraction(self) -> float:
        return sum(bool(r.error) for r in self.records) / max(1, len(self.records))


def resolve_calibration(spec: ScenarioSpec, config, calibration=None) -> CalibrationCurve:
    """Load the named calibration or compute it when auto-calibration is on."""
    if calibration is None and spec.calibration_file is not None:
        calibration = spec._path(spec.calibration_file)
    if isinstance(calibration, CalibrationCurve):
        curve = calibration
    elif calibration is not None and Path(calibration).exists():
        curve = load_calibration(calibration)
    elif spec.auto_calibrate:
        curve = calibrate(config, mc_size=spec.calibration_mc_n, seed=spec.calibration_seed)
        if calibration is not None:
            save_calibration(curve, calibration)
    else:
        raise ConfigError("no calibration available and auto_calibrate is off")
    if curve.config_hash and curve.config_hash != config.fingerprint():
        raise ConfigError("calibration was computed for a different generator configuration")
    return curve


def _task(args):
    spec, config, point, arr_index, rep, methods = args
    return arr_index, rep, run_repetition(spec, config, point, arr_index, rep, methods)


def _sort_key(spec, point_index):
    order = {m: i for i, m in enumerate(spec.methods)}
    return lambda r: (point_index[r.arr1], r.rep, order.get(r.method, len(order)))


def run_benchmark(spec: ScenarioSpec, out_dir=None, workers=1, calibration=None,
                  resume=False, force=False, reps=None) -> BenchmarkReport:
    """Run every (arr point, repetition, method) of ``spec`` and write the outputs."""
    t0 = time.perf_counter()
    out_dir = Path(spec.output_dir if out_dir is None else out_dir)
    reps = spec.repetitions if reps is None else reps
    config = spec.generator_config()
    guarded = [m for m in spec.methods if METHODS[m].max_p is not None and config.p > METHODS[m].max_p]
    if guarded and not force:
        raise ConfigError(f"{', '.join(guarded)} refused for p={config.p} > 30; pass --force")
    curve = resolve_calibration(spec, config, calibration)
    points = arr_grid(curve, spec.arr_points)
    point_index = {p.arr1_target: i for i, p in enumerate(points)}

    done: dict = {}
    previous = []
    if resume and (out_dir / RECORDS_FILE).exists():
        previous = [r for r in read_records(out_dir / RECORDS_FILE)
                    if r.arr1 in point_index and r.rep < reps and r.method in spec.methods]
        for r in previous:
            done.setdefault((point_index[r.arr1], r.rep), set()).add(r.method)
    writer = RecordWriter(out_dir, append=bool(previous))

    tasks = []
    for i, pt in enumerate(points):
        for rep in range(reps):
            todo = tuple(m for m in spec.methods if m not in done.get((i, rep), ()))
            if todo:
                tasks.append((spec, config, pt, i, rep, todo))
    records = list(previous)
    try:
        if workers <= 1:
            for t in tasks:
                recs = _task(t)[2]
                writer.write(recs)
                records.extend(recs)
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for _, _, recs in pool.map(_task, tasks, chunksize=1):
                    writer.write(recs)
                    records.extend(recs)
    finally:
        writer.close()

    records.sort(key=_sort_key(spec, point_index))
    # rewrite in canonical order so output does not depend on scheduling
    final = RecordWriter(out_dir, append=False)
    final.write(records)
    final.close()

    aggs = aggregate(records, spec.predictive_set, spec.alpha)
    write_aggregate(aggs, out_dir / AGGREGATE_FILE)
    meta = {
        "scenario": spec.to_dict(), "spec_digest": spec.digest(),
        "calibration_hash": curve.config_hash, "calibration_mc_n": curve.mc_size,
        "calibration_seed": curve.seed, "repetitions": reps,
        "seed_scheme": "splitmix64(splitmix64(splitmix64(base_seed) ^ arr_index) ^ rep); "
                       "named substreams SeedSequence([seed, crc32(label)])",
        "predictive_set": [j + 1 for j in spec.predictive_set],
        "points": [{"arr_index": i, "arr1": p.arr1_target, "arr0": p.arr0_target,
                    "beta1": p.beta1, "beta0": p.beta0} for i, p in enumerate(points)],
        "seeds": [{"arr_index": i, "arr1": p.arr1_target, "rep": r,
                   "seed": repetition_seed(spec.base_seed, i, r)}
                  for i, p in enumerate(points) for r in range(reps)],
        "workers": workers, "wall_seconds": time.perf_counter() - t0,
    }
    (out_dir / METADATA_FILE).write_text(json.dumps(meta, indent=1) + "\n")
    return BenchmarkReport(records, aggs, meta)


def aggregate_tables(rows: list[AggregateRow], metrics=("power", "average_precision", "accuracy")):
    """Wide tables (arr1 x method, 'mean ± half_width') keyed by metric name."""
    tables = {}
    for metric in metrics:
        sel = [r for r in rows if r.metric == metric]
        arrs = sorted({r.arr1 for r in sel})
        methods = list(dict.fromkeys(r.method for r in sel))
        cell = {(r.arr1, r.method): f"{r.mean:.2f} ± {r.half_width:.2f}" for r in sel}
        tables[metric] = [["arr1"] + methods] + [
            [f"{a:.6f}"] + [cell.get((a, m), "") for m in methods] for a in arrs]
    return tables
