"""Command-line front end: ``hazshift {estimate,simulate,study,diagnose,curves}``.

JSON files are the authoritative outputs; CSV files are projections of them.
All files of one command are staged in a temporary directory and moved into
place only after the command succeeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import secrets
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .cox import fit_cox, schoenfeld
from .data import Schema, load_csv, validate, write_csv
from .effect import PowerHazard, ThetaSpec, intervention_curves, ipw_weights
from .inference import effect_curve
from .km import kaplan_meier
from .simlab import DgpSpec, default_thetas, event_probability, generate, run_study

log = logging.getLogger("hazshift")


class CliError(Exception):
    pass


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


@contextmanager
def staged(out_dir: Path):
    """Yield a scratch directory whose files are moved into ``out_dir`` on
    success; nothing is left behind on failure."""
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".hazshift-", dir=out_dir.parent))
    try:
        yield tmp
        out_dir.mkdir(parents=True, exist_ok=True)
        for f in sorted(tmp.iterdir()):
            os.replace(f, out_dir / f.name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _write_rows(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def parse_thetas(values: list[str] | None) -> list[ThetaSpec]:
    """Each value is either one ``loglinear:``/``piecewise:`` token or a
    comma-separated list of constants (fractions such as ``1/3`` allowed)."""
    out = []
    for v in values or []:
        for part in v.split(";"):
            part = part.strip()
            if not part:
                continue
            if part.startswith(("loglinear:", "piecewise:")):
                out.append(ThetaSpec.parse(part))
            else:
                out.extend(ThetaSpec.parse(tok) for tok in part.split(",") if tok.strip())
    return out


def _metadata(args, seed) -> dict:
    config = {k: v for k, v in sorted(vars(args).items())
              if k not in ("func", "threads", "record_time", "verbose")}
    return {"artifact": "hazshift", "version": __version__,
            "command": args.command, "config": config, "seed": seed}


def _finish_meta(meta: dict, args, t0: float) -> dict:
    wall = time.perf_counter() - t0
    log.info("%s finished in %.2fs", args.command, wall)
    if args.record_time:
        meta = dict(meta, wall_time_s=wall)
    return meta


def _schema(args) -> Schema:
    covs = None
    if args.covariates:
        covs = tuple(c.strip() for c in args.covariates.split(",") if c.strip())
    return Schema(y=args.col_y, time=args.col_time, delta=args.col_delta,
                  covariates=covs)


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(63)
    return args.seed


def cmd_estimate(args) -> dict:
    t0 = time.perf_counter()
    thetas = parse_thetas(args.theta)
    if not thetas:
        raise CliError("--theta is required")
    seed = _seed(args) if args.B > 0 else args.seed
    ds = load_csv(args.input, args.tau, _schema(args))
    fit = fit_cox(ds)
    ests = effect_curve(ds, thetas, args.B, seed=seed, fit=fit,
                        workers=args.threads)
    diags = {}
    for spec in thetas:
        summ = ipw_weights(ds, fit, spec).summary()
        diags[spec.label] = summ
        print(f"theta={spec.label}: max weight {summ['max_weight']:.4g}, "
              f"effective sample size {summ['ess']:.1f}", file=sys.stderr)
    doc = {"metadata": _metadata(args, seed), "n": ds.n, "cox": fit.to_json(),
           "estimates": [e.to_json() for e in ests],
           "weight_diagnostics": diags}
    doc["metadata"] = _finish_meta(doc["metadata"], args, t0)
    with staged(Path(args.out)) as tmp:
        _write_text(tmp / "estimates.json", dumps(doc))
        rows = [["theta_label", "psi_hat", "lo", "hi"]]
        for e in ests:
            rows.append([e.theta.label, repr(e.psi_hat),
                         "" if e.se is None else repr(e.ci_low),
                         "" if e.se is None else repr(e.ci_high)])
        _write_rows(tmp / "effect_curve.csv", rows)
    return doc


def cmd_simulate(args) -> dict:
    seed = _seed(args)
    spec = DgpSpec(args.dgp)
    ds = generate(spec, args.n, seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".hazshift-", dir=out.parent)
    os.close(fd)
    try:
        write_csv(ds, tmp)
        os.replace(tmp, out)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
    log.info("wrote %d records (seed %d); event fraction %.4f, expected %.4f",
             ds.n, seed, ds.delta.mean(), event_probability(spec))
    return {"n": ds.n, "seed": seed}


def cmd_study(args) -> dict:
    t0 = time.perf_counter()
    seed = _seed(args)
    spec = DgpSpec(args.dgp)
    thetas = parse_thetas(args.theta) or list(default_thetas(spec))
    rep = run_study(spec, thetas, n=args.n, R=args.R, B=args.B, seed=seed,
                    workers=args.threads)
    doc = {"metadata": _metadata(args, seed), "report": rep.to_json()}
    doc["metadata"] = _finish_meta(doc["metadata"], args, t0)
    with staged(Path(args.out)) as tmp:
        _write_text(tmp / "study.json", dumps(doc))
        _write_rows(tmp / "study.csv", rep.table())
    for line in rep.table():
        print("\t".join(line), file=sys.stderr)
    return doc


def cmd_diagnose(args) -> dict:
    t0 = time.perf_counter()
    ds = load_csv(args.input, args.tau, _schema(args))
    fit = fit_cox(ds)
    rep = schoenfeld(ds, fit)
    km = kaplan_meier(ds)
    doc = {"metadata": _metadata(args, None), "cox": fit.to_json(),
           "schoenfeld": rep.to_json(), "km_has_bands": km.has_bands,
           "violations": [str(v) for v in validate(ds)]}
    doc["metadata"] = _finish_meta(doc["metadata"], args, t0)
    with staged(Path(args.out)) as tmp:
        _write_text(tmp / "diagnose.json", dumps(doc))
        rows = [["record", "time", *ds.covariate_names]]
        for i, t, r in zip(rep.record_index, rep.event_times, rep.residuals):
            rows.append([int(i), repr(float(t)), *(repr(float(v)) for v in r)])
        _write_rows(tmp / "schoenfeld_residuals.csv", rows)
        tests = [["covariate", "rho", "chisq", "p_value"]]
        for c, rho, z, p in zip(rep.covariate_names, rep.rho, rep.chisq,
                                rep.p_value):
            tests.append([c, repr(float(rho)), repr(float(z)), repr(float(p))])
        tests.append(["GLOBAL", "", repr(rep.global_chisq),
                      repr(rep.global_p_value)])
        _write_rows(tmp / "schoenfeld_tests.csv", tests)
        km.to_csv(tmp / "km.csv")
    return doc


def _file_label(spec: ThetaSpec) -> str:
    return "".join(ch if ch.isalnum() or ch in ".-" else "_" for ch in spec.label)


def cmd_curves(args) -> dict:
    t0 = time.perf_counter()
    thetas = parse_thetas(args.theta)
    if not thetas:
        raise CliError("--theta is required")
    try:
        hazard = PowerHazard(args.scale, args.power, tuple(
            float(v) for v in args.link.split(",")))
    except ValueError as exc:
        raise CliError(f"invalid hazard parameters: {exc}") from None
    l = [float(v) for v in args.l.split(",")]
    if len(l) != len(hazard.link):
        raise CliError("--l and --link must have the same length")
    if args.grid_step <= 0 or args.grid_end <= 0:
        raise CliError("--grid-end and --grid-step must be positive")
    m = int(round(args.grid_end / args.grid_step))
    grid = np.linspace(0.0, args.grid_end, m + 1)
    files = {}
    with staged(Path(args.out)) as tmp:
        for spec in thetas:
            tab = intervention_curves(hazard, l, spec, grid)
            name = f"curve_theta_{_file_label(spec)}.csv"
            tab.to_csv(tmp / name)
            files[spec.label] = name
        doc = {"metadata": _metadata(args, None), "files": files}
        doc["metadata"] = _finish_meta(doc["metadata"], args, t0)
        _write_text(tmp / "curves.json", dumps(doc))
    return doc


def _add_schema_args(p):
    p.add_argument("--input", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--col-y", default="y")
    p.add_argument("--col-time", default="time")
    p.add_argument("--col-delta", default="delta")
    p.add_argument("--covariates", default=None,
                   help="comma-separated covariate columns (default: all others)")


def build_parser() -> argparse.ArgumentParser:
    env_threads = int(os.environ.get("HAZSHIFT_THREADS", "1") or 1)
    parser = argparse.ArgumentParser(
        prog="hazshift",
        description="Incremental effects of shifting the treatment-initiation hazard.")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeded=False):
        p.add_argument("--out", required=True)
        p.add_argument("--threads", type=int, default=env_threads,
                       help="worker processes (env HAZSHIFT_THREADS)")
        p.add_argument("--record-time", action="store_true",
                       help="add wall time to the JSON metadata")
        if seeded:
            p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("estimate", help="effect estimates for a CSV dataset")
    _add_schema_args(p)
    p.add_argument("--theta", action="append", required=True)
    p.add_argument("--B", type=int, default=200)
    common(p, seeded=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="write a simulated dataset")
    p.add_argument("--dgp", choices=("main", "multi"), required=True)
    p.add_argument("--n", type=int, required=True)
    common(p, seeded=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("study", help="Monte-Carlo study of the estimator")
    p.add_argument("--dgp", choices=("main", "multi"), required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--R", type=int, default=500)
    p.add_argument("--B", type=int, default=None)
    p.add_argument("--theta", action="append", default=None)
    common(p, seeded=True)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("diagnose", help="Schoenfeld test and Kaplan-Meier curve")
    _add_schema_args(p)
    common(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("curves", help="hazard/density under constant shifts")
    p.add_argument("--scale", type=float, default=0.9)
    p.add_argument("--power", type=float, default=0.5)
    p.add_argument("--link", default="0.2")
    p.add_argument("--l", default="0")
    p.add_argument("--theta", action="append", required=True)
    p.add_argument("--grid-end", type=float, default=3.0)
    p.add_argument("--grid-step", type=float, default=0.01)
    common(p)
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "study" and args.B is None:
        args.B = 200 if args.dgp == "main" else 50
    try:
        args.func(args)
    except Exception as exc:  # every module error becomes an error object
        err = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
