"""Command line: calibrate, generate, run, report.

Exit status 0 on success, 2 on a configuration error, 3 when more than 10% of
the benchmark records errored.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_scenario
from .dgp import (calibrate, generate_trial, heterogeneity_point, load_calibration,
                  save_calibration, save_trial)
from .harness import (AGGREGATE_FILE, ERROR_THRESHOLD, METADATA_FILE, aggregate_tables,
                      read_records, resolve_calibration, run_benchmark)
from .metrics import aggregate, write_aggregate

log = logging.getLogger("survhte")

EXIT_OK, EXIT_CONFIG, EXIT_FAILURES = 0, 2, 3


def _calibrate(args):
    spec = load_scenario(args.scenario)
    config = spec.generator_config()
    grid = np.linspace(-10.0, 10.0, args.grid_points)
    curve = calibrate(config, grid, mc_size=args.mc_n, seed=args.seed)
    save_calibration(curve, args.out)
    lo0, hi0 = curve.achievable(0)
    lo1, hi1 = curve.achievable(1)
    log.info("prevalence %.4f, ARR0 in [%.4f, %.4f], ARR1 in [%.4f, %.4f]",
             curve.prevalence, lo0, hi0, lo1, hi1)
    return EXIT_OK


def _generate(args):
    spec = load_scenario(args.scenario)
    config = spec.generator_config()
    curve = resolve_calibration(spec, config, load_calibration(args.calibration))
    try:
        point = heterogeneity_point(curve, args.arr1)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    data = generate_trial(config, point, args.seed, n=args.n)
    save_trial(data, args.out)
    log.info("beta1 %.4f, beta0 %.4f, event rate %.3f", point.beta1, point.beta0, data.event.mean())
    return EXIT_OK


def _run(args):
    spec = load_scenario(args.scenario)
    report = run_benchmark(spec, out_dir=args.out_dir, workers=args.workers,
                           calibration=args.calibration, resume=args.resume, force=args.force,
                           reps=args.reps)
    frac = report.error_fraction
    log.info("%d records, %.1f%% errored, %.1f s", len(report.records), 100 * frac,
             report.metadata["wall_seconds"])
    return EXIT_FAILURES if frac > ERROR_THRESHOLD else EXIT_OK


def _report(args):
    records = read_records(args.records)
    if args.predictive:
        predictive = [int(v) - 1 for v in args.predictive.split(",")]
    else:
        meta = Path(args.records).with_name(METADATA_FILE)
        if not meta.exists():
            raise ConfigError("no metadata.json beside the records; pass --predictive")
        predictive = [v - 1 for v in json.loads(meta.read_text())["predictive_set"]]
    rows = aggregate(records, predictive, args.alpha)
    write_aggregate(rows, args.out)
    out = Path(args.out)
    for metric, table in aggregate_tables(rows).items():
        with open(out.with_name(f"{out.stem}_{metric}.csv"), "w", newline="") as fh:
            csv.writer(fh).writerows(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="survhte", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="tabulate subgroup ARR against beta")
    c.add_argument("--scenario", required=True)
    c.add_argument("--grid-points", type=int, default=201)
    c.add_argument("--mc-n", type=int, default=100_000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.set_defaults(func=_calibrate)

    g = sub.add_parser("generate", help="write one synthetic trial as CSV")
    g.add_argument("--scenario", required=True)
    g.add_argument("--calibration", required=True)
    g.add_argument("--arr1", type=float, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_generate)

    r = sub.add_parser("run", help="run the benchmark grid")
    r.add_argument("--scenario", required=True)
    r.add_argument("--calibration", default=None,
                   help="calibration CSV; computed and saved here if missing")
    r.add_argument("--reps", type=int, default=None)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out-dir", default=None)
    r.add_argument("--resume", action="store_true")
    r.add_argument("--force", action="store_true", help="allow SIDES/SeqBT above p=30")
    r.set_defaults(func=_run)

    p = sub.add_parser("report", help="aggregate a records CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--out", default=AGGREGATE_FILE)
    p.add_argument("--predictive", default=None, help="1-based indices, e.g. 17,18,19,20")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: missing file {exc.filename}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
