"""Command-line interface: ingest, simulate, emulate, fit, replicate, report.

Exit codes: 0 success, 1 runtime failure, 2 usage error (including unknown
countries and bad date windows).
"""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import os
import sys

import numpy as np

from .errors import ArgumentError, L2CalibError, NotFound, RangeError
from .timeseries import (parse_cumulative_csv, read_series_json, to_daily_increments,
                         write_series_json)

log = logging.getLogger("l2calib")

USAGE_ERRORS = (ArgumentError, NotFound, RangeError)


class UsageError(Exception):
    pass


def _date(text):
    try:
        return dt.date.fromisoformat(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an ISO date: {text!r}") from exc


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from exc


def _names(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _assignments(text):
    out = {}
    for item in text.split(","):
        if not item.strip():
            continue
        key, sep, val = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected name=value, got {item!r}")
        try:
            out[key.strip()] = float(val)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"not a number in {item!r}") from exc
    return out


# -- run configuration -------------------------------------------------------

_CONFIG_FLAGS = {
    "model": "model", "N": "N", "free": "free", "fixed": "fixed", "lower": "lower",
    "upper": "upper", "nu": "nu", "rhos": "rhos", "method": "method", "level": "level",
    "seed": "seed", "starts": "starts", "phi": "phi", "emu_runs": "emu_runs",
    "emu_times": "emu_times", "emu_reps": "emu_reps", "emu_starts": "emu_starts",
    "band_points": "band_points",
}


def _add_config_flags(p):
    g = p.add_argument_group("run configuration (overrides --config)")
    g.add_argument("--config", help="JSON file with run settings")
    g.add_argument("--model", choices=["seir-det", "seir-stoch", "toy-1d", "toy-3d"])
    g.add_argument("--N", type=float, help="population size")
    g.add_argument("--free", type=_names, help="calibrated SEIR parameters, e.g. beta,kappa,gamma")
    g.add_argument("--fixed", type=_assignments,
                   help="fixed SEIR values, e.g. i0=20,e0=20,r0_init=0")
    g.add_argument("--lower", type=_floats, help="lower bounds, comma separated")
    g.add_argument("--upper", type=_floats, help="upper bounds, comma separated")
    g.add_argument("--nu", type=float, help="Matérn smoothness")
    g.add_argument("--rhos", type=_floats, help="candidate Matérn length-scales")
    g.add_argument("--method", choices=["l2", "ls", "mle"])
    g.add_argument("--level", type=float, help="confidence level")
    g.add_argument("--seed", type=int)
    g.add_argument("--starts", type=int, help="optimizer multi-starts")
    g.add_argument("--phi", choices=["auto", "on", "off"], help="overdispersion scaling")
    g.add_argument("--emu-runs", dest="emu_runs", type=int)
    g.add_argument("--emu-times", dest="emu_times", type=int)
    g.add_argument("--emu-reps", dest="emu_reps", type=int)
    g.add_argument("--emu-starts", dest="emu_starts", type=int)
    g.add_argument("--band-points", dest="band_points", type=int)


def run_config(args):
    from .pipeline import RunConfig, load_config

    doc = load_config(args.config) if getattr(args, "config", None) else {}
    for flag, key in _CONFIG_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            doc[key] = val
    if "fixed" in doc and "fixed" in vars(args) and args.fixed is not None:
        base = RunConfig().fixed
        base.update(doc["fixed"])
        doc["fixed"] = base
    return RunConfig.from_dict(doc)


# -- commands ----------------------------------------------------------------

def cmd_ingest(args):
    if args.end <= args.start:
        raise UsageError("--end must be after --start")
    with open(args.input, "rb") as fh:
        raw = fh.read()
    cum = parse_cumulative_csv(raw, args.country)
    series = to_daily_increments(cum, args.start, args.end)
    write_series_json(series, args.out, args.start, args.end)
    log.info("%s: %d daily counts, %d clamped revisions", args.country, series.n,
             series.clamp_count)
    return 0


def cmd_simulate(args):
    from .seir import SeirSimulator, StochasticSeirSimulator
    from .toys import TOY_1D, TOY_3D

    cfg = run_config(args)
    theta = np.asarray(args.theta, float)
    days = np.arange(args.days, dtype=float)
    if cfg.seir:
        if theta.size != len(cfg.free):
            raise ArgumentError(f"--theta needs {len(cfg.free)} values for {','.join(cfg.free)}")
    header = ["x"]
    if cfg.model == "seir-det":
        cols = [SeirSimulator(cfg.N, cfg.free, cfg.fixed)(days, theta)]
        header.append("incidence")
    elif cfg.model == "seir-stoch":
        reps = StochasticSeirSimulator(cfg.N, cfg.free, cfg.fixed).replicates(
            days, theta, args.replicates, cfg.seed)
        cols = list(reps)
        header += [f"rep{j + 1}" for j in range(args.replicates)]
    else:
        toy = TOY_1D if cfg.model == "toy-1d" else TOY_3D
        days = np.linspace(*toy.domain, args.days)
        mean = toy.f(days, theta)
        rng = np.random.default_rng(cfg.seed)
        cols = [mean] + list(rng.poisson(np.maximum(mean, 0), size=(args.replicates, days.size)))
        header += ["mean"] + [f"rep{j + 1}" for j in range(args.replicates)]
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(days, *cols):
            w.writerow([f"{v:.10g}" for v in row])
    return 0


def cmd_emulate(args):
    from .pipeline import train_seir_emulator

    cfg = run_config(args)
    if cfg.model == "seir-stoch":
        emu = train_seir_emulator(cfg, args.horizon)
    elif cfg.model in ("toy-1d", "toy-3d"):
        emu = cfg.toy.train_emulator(args.m, args.a, cfg.seed, starts=cfg.emu_starts)
    else:
        raise ArgumentError("emulate needs --model seir-stoch, toy-1d or toy-3d")
    emu.save(args.out)
    log.info("emulator with %d design points written to %s", emu.design.points.shape[0], args.out)
    return 0


def cmd_fit(args):
    from .emulator import Emulator
    from .pipeline import fit_series

    cfg = run_config(args)
    series = read_series_json(args.series)
    emulator = Emulator.load(args.emulator) if args.emulator else None
    out = fit_series(series, cfg, emulator)
    band_path = args.band or os.path.splitext(args.out)[0] + "_band.csv"
    out.band.write_csv(band_path)
    out.report.band_csv = os.path.relpath(band_path, os.path.dirname(os.path.abspath(args.out)))
    out.report.extra["config"] = cfg.to_dict()
    out.report.write(args.out)
    log.info("theta_hat = %s", np.array2string(out.report.theta_hat, precision=5))
    return 0


def cmd_replicate(args):
    from .bench import StudyConfig, run_mse_study

    study = {"toy-1d": "TOY_1D", "toy-3d": "TOY_3D", "mle": "MLE_INCONSISTENCY"}[args.study]
    cfg = StudyConfig(study=study, n=args.n, replicates=args.replicates, seed=args.seed,
                      with_emulator=args.emulator, emulator_m=args.m, emulator_a=args.a,
                      coverage=args.coverage, level=args.level)
    res = run_mse_study(cfg, workers=args.workers)
    res.write_csv(args.out)
    res.write_json(args.json or os.path.splitext(args.out)[0] + ".json")
    return 0


def cmd_report(args):
    from .report import load_report, render

    reports = [load_report(p) for p in args.reports or []]
    studies = []
    for p in args.studies or []:
        with open(p, encoding="utf-8") as fh:
            studies.append(json.load(fh))
    if not reports and not studies:
        raise UsageError("nothing to report: pass fit reports and/or --studies")
    series = {}
    for p in args.series or []:
        s = read_series_json(p)
        series[s.country] = s
    for path in render(reports, args.out_dir, studies, series):
        log.info("wrote %s", path)
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="l2calib", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="cumulative JHU-style CSV to a daily series JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--country", required=True)
    p.add_argument("--start", required=True, type=_date)
    p.add_argument("--end", required=True, type=_date)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("simulate", help="simulator output on a day grid as CSV")
    _add_config_flags(p)
    p.add_argument("--theta", required=True, type=_floats)
    p.add_argument("--days", type=int, default=120)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("emulate", help="train an emulator and save it as JSON")
    _add_config_flags(p)
    p.add_argument("--horizon", type=float, default=120.0, help="last day of the SEIR time grid")
    p.add_argument("--m", type=int, default=100, help="toy design size")
    p.add_argument("--a", type=int, default=100, help="toy replicates per design point")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_emulate)

    p = sub.add_parser("fit", help="calibrate a model to a daily series")
    _add_config_flags(p)
    p.add_argument("--series", required=True)
    p.add_argument("--emulator", help="saved emulator for --model seir-stoch")
    p.add_argument("--out", required=True)
    p.add_argument("--band", help="band CSV path (default: next to --out)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("replicate", help="run a replication study")
    p.add_argument("--study", required=True, choices=["toy-1d", "toy-3d", "mle"])
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int)
    p.add_argument("--emulator", action="store_true", help="add emulated fits")
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--a", type=int, default=100)
    p.add_argument("--coverage", action="store_true")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--workers", type=int, help="processes (default: L2CALIB_THREADS or 1)")
    p.add_argument("--out", required=True)
    p.add_argument("--json")
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("report", help="merge fit reports into tables and figures")
    p.add_argument("reports", nargs="*")
    p.add_argument("--studies", nargs="*")
    p.add_argument("--series", nargs="*", help="series JSONs to overlay on the bands")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def _fail(code, exc):
    err = {"error": type(exc).__name__, "message": str(exc)}
    node = getattr(exc, "node", None)
    if node is not None:
        err["node"] = node
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, *USAGE_ERRORS) as exc:
        return _fail(2, exc)
    except (L2CalibError, OSError, ValueError) as exc:
        return _fail(1, exc)


if __name__ == "__main__":
    sys.exit(main())
