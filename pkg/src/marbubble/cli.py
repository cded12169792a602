"""Command-line front end.

Every command writes its outputs plus ``<command>.manifest.json`` into
``--out-dir``.  Exit codes: 0 success, 1 input/output error, 2 invalid
arguments or model, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bubble_detector import detect, known_fit
from .estimation import (
    DEFAULT_TRANSFORMS,
    OptimizationError,
    TransformSpec,
    fit_ols_noncausal,
    gcov_estimate,
)
from .mar_model import ErrorDist, MarModel, simulate, validate
from .moments import ConditionalState, divergence_report
from .montecarlo import McConfig, run
from .tail_inference import hill_estimate, time_to_peak_report
from .timeseries_io import (
    DataError,
    TimeSeries,
    load_csv,
    resample_monthly_last,
    rolling_variance,
    spline_detrend,
    summary,
    write_csv,
)

log = logging.getLogger("marbubble")

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3


class _Run:
    """Collects outputs and writes the manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = argv
        self.out = Path(args.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs = []
        self.inputs = {}
        self.started = _dt.datetime.now(_dt.timezone.utc).isoformat()

    @property
    def manifest_name(self) -> str:
        return f"{self.args.command}.manifest.json"

    def input(self, path) -> Path:
        p = Path(path)
        self.inputs[str(p)] = hashlib.sha256(p.read_bytes()).hexdigest()
        return p

    def write(self, name: str, text: str) -> Path:
        p = self.out / name
        p.write_text(text)
        self.outputs.append(name)
        return p

    def write_json(self, name: str, obj: dict) -> Path:
        obj = dict(obj)
        obj["manifest"] = self.manifest_name
        return self.write(name, json.dumps(obj, indent=2, default=_json_default) + "\n")

    def finish(self) -> None:
        cfg = {k: v for k, v in vars(self.args).items() if k != "func"}
        manifest = {
            "command": self.args.command,
            "argv": self.argv,
            "config": cfg,
            "seed": self.args.seed,
            "version": __version__,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "started": self.started,
            "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        }
        (self.out / self.manifest_name).write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _model(args) -> MarModel:
    return validate(MarModel(args.r, args.s, args.phi, args.psi, ErrorDist.parse(args.dist)))


def _load(run_, args) -> TimeSeries:
    ts = load_csv(run_.input(args.input), args.date_col, args.value_col)
    if getattr(args, "monthly", False):
        ts = resample_monthly_last(ts)
    return ts


def _fit(y, args):
    if args.method == "ols":
        if (args.r, args.s) != (0, 1):
            raise ValueError("OLS is available for MAR(0,1) only")
        return fit_ols_noncausal(y)
    return gcov_estimate(
        y, args.r, args.s, TransformSpec.parse(args.transforms), args.H, covariance=args.covariance, seed=args.seed
    )


def cmd_simulate(run_, args):
    y = simulate(_model(args), args.T, seed=args.seed, burn=args.burn)
    ts = TimeSeries.from_values(y, start=args.start)
    if args.format == "json":
        run_.write_json("series.json", {"dates": ts.date_strings(), "values": y.tolist(), "model": _model(args).to_dict()})
    else:
        write_csv(run_.out / "series.csv", ts)
        run_.outputs.append("series.csv")


def cmd_estimate(run_, args):
    ts = _load(run_, args)
    fit = _fit(ts.values, args)
    run_.write_json("fit.json", fit.to_dict())
    print(json.dumps({"theta": fit.to_dict()["theta"], "stderr": fit.to_dict()["stderr"]}))


def cmd_detect(run_, args):
    ts = _load(run_, args)
    if args.detrend:
        ts, _ = spline_detrend(ts, args.knots)
    if np.ptp(ts.values) == 0:
        log.warning("constant series: nothing to fit, coefficients set to zero")
        fit = known_fit(args.r, args.s, T=len(ts))
    else:
        fit = _fit(ts.values, args)
    rep = detect(ts.values, fit, args.threshold, args.min_run, dates=ts.date_strings())
    run_.write_json("fit.json", fit.to_dict())
    run_.write_json("detect.json", rep.to_dict())
    run_.write("detect.csv", rep.to_csv())
    for e in rep.to_dict()["episodes"]:
        print(f"episode {e['start_date']} .. {e['end_date']} (peak {e['peak_date']})")


def cmd_duration(run_, args):
    model = MarModel(1, 1, args.phi, args.psi) if args.phi > 0 else MarModel(0, 1, 0.0, args.psi)
    rep = time_to_peak_report(model, args.alpha, tuple(range(1, args.max_horizon + 1)), args.level)
    run_.write_json("duration.json", json.loads(rep.to_json()))
    print(rep.to_json())


def cmd_moments(run_, args):
    rep = divergence_report(ConditionalState(args.y_t, args.y_prev, args.sigma), args.phi, args.psi)
    run_.write_json("moments.json", rep)
    print(json.dumps({"printed": rep["printed"], "composed": rep["composed"]}))


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.split(","))


def cmd_mc(run_, args):
    cfg = McConfig(
        family=args.family,
        dists=tuple(args.dists.split(",")),
        psis=_floats(args.psis),
        phis=_floats(args.phis),
        T=args.T,
        R=args.R,
        burn=args.burn,
        seed=args.seed,
        pick=args.pick,
        rate_tol=args.rate_tol,
        transforms=TransformSpec.parse(args.transforms),
        H=args.H,
        threads=args.threads,
    )
    tab = run(cfg, tuple(args.metrics.split(",")))
    if args.format == "json":
        run_.write_json("mc.json", {"cells": [c.__dict__ for c in tab.cells]})
    else:
        run_.write("mc.csv", tab.to_csv())
    run_.write("mc.txt", tab.render())
    print(tab.render(), end="")


def cmd_detrend(run_, args):
    ts = _load(run_, args)
    resid, trend = spline_detrend(ts, args.knots, boundary=args.boundary)
    write_csv(run_.out / "detrended.csv", ts, {"trend": trend, "residual": resid.values})
    run_.outputs.append("detrended.csv")


def cmd_stats(run_, args):
    ts = _load(run_, args)
    out = {"summary": summary(ts).as_dict()}
    try:
        a, se = hill_estimate(ts.values, args.hill_k)
        out["hill"] = {"alpha": a, "stderr": se}
    except ValueError as exc:
        out["hill"] = {"error": str(exc)}
    if len(ts) >= args.window:
        rv = rolling_variance(ts, args.window)
        write_csv(run_.out / "rolling_variance.csv", rv)
        run_.outputs.append("rolling_variance.csv")
    run_.write_json("stats.json", out)
    print(json.dumps(out["summary"]))


def _add_model(p, r=1, s=1, phi=0.0, psi=0.0):
    p.add_argument("--r", type=int, default=r)
    p.add_argument("--s", type=int, default=s)
    p.add_argument("--phi", type=float, default=phi)
    p.add_argument("--psi", type=float, default=psi)


def _add_input(p):
    p.add_argument("input", help="CSV file with a header row")
    p.add_argument("--date-col", default="date")
    p.add_argument("--value-col", default="value")
    p.add_argument("--monthly", action="store_true", help="resample to the last value of each month first")


def _add_fit(p):
    p.add_argument("--method", choices=("gcov", "ols"), default="gcov")
    p.add_argument("--transforms", default=str(DEFAULT_TRANSFORMS), help="e.g. powers:1,2 or logabs:1,2")
    p.add_argument("--H", type=int, default=2)
    p.add_argument("--covariance", choices=("sandwich", "gauss_newton", "bootstrap"), default="sandwich")


def _common(suppress: bool) -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand; the copy on
    # each subcommand must not overwrite values given before it
    def d(v):
        return argparse.SUPPRESS if suppress else v

    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=d(0))
    p.add_argument("--threads", type=int, default=d(1))
    p.add_argument("--out-dir", default=d("."))
    p.add_argument("--format", choices=("csv", "json"), default=d("csv"))
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    top = _common(suppress=False)
    common = _common(suppress=True)

    ap = argparse.ArgumentParser(prog="marbubble", description=__doc__.splitlines()[0], parents=[top])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a MAR path")
    _add_model(p)
    p.add_argument("--dist", default="t3")
    p.add_argument("--T", type=int, default=400)
    p.add_argument("--burn", type=int, default=200)
    p.add_argument("--start", default="2000-01", help="first month of the synthetic date index")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", parents=[common], help="fit a MAR model")
    _add_input(p)
    _add_model(p)
    _add_fit(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("detect", parents=[common], help="date bubble episodes")
    _add_input(p)
    _add_model(p)
    _add_fit(p)
    p.add_argument("--detrend", action="store_true")
    p.add_argument("--knots", type=int, default=24, help="knot spacing in months")
    p.add_argument("--threshold", type=float, default=0.975)
    p.add_argument("--min-run", type=int, default=2)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("duration", parents=[common], help="time-to-peak report")
    p.add_argument("--phi", type=float, default=0.0)
    p.add_argument("--psi", type=float, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--level", type=float, default=0.10)
    p.add_argument("--max-horizon", type=int, default=6)
    p.set_defaults(func=cmd_duration)

    p = sub.add_parser("moments", parents=[common], help="conditional latent moments, Cauchy MAR(1,1)")
    p.add_argument("--y-t", type=float, required=True)
    p.add_argument("--y-prev", type=float, required=True)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--psi", type=float, required=True)
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("mc", parents=[common], help="size/power Monte Carlo")
    p.add_argument("--family", choices=("ols01", "gcov11"), default="ols01")
    p.add_argument("--dists", default="t3,t4,t5")
    p.add_argument("--psis", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    p.add_argument("--phis", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    p.add_argument("--metrics", default="size,power")
    p.add_argument("--T", type=int, default=400)
    p.add_argument("--R", type=int, default=200)
    p.add_argument("--burn", type=int, default=200)
    p.add_argument("--pick", choices=("first", "last", "max"), default="first")
    p.add_argument("--rate-tol", type=float, default=None)
    p.add_argument("--transforms", default="powers:1,2")
    p.add_argument("--H", type=int, default=4)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("detrend", parents=[common], help="cubic spline detrending")
    _add_input(p)
    p.add_argument("--knots", type=int, default=24)
    p.add_argument("--boundary", choices=("free", "natural"), default="free")
    p.set_defaults(func=cmd_detrend)

    p = sub.add_parser("stats", parents=[common], help="summary statistics and tail index")
    _add_input(p)
    p.add_argument("--hill-k", type=int, default=None)
    p.add_argument("--window", type=int, default=5)
    p.set_defaults(func=cmd_stats)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run_ = _Run(args, argv)
        args.func(run_, args)
        run_.finish()
    except (OSError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OptimizationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
