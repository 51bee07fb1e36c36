"""Command-line interface: ``analyze``, ``simulate``, ``calibrate``, ``methods``.

Exit codes: 0 success, 1 other library error, 2 usage or config error,
3 data error, 4 model-fit error, 5 estimation error, 6 bootstrap/interval
error, 7 simulation error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from . import __version__, dgp, harness
from .bootstrap import PointEstimator
from .config import load_config
from .data import Dataset, load_csv, subgroup_split
from .errors import ConfigError, InvalidMethod, PSWError
from .estimators import WeightScheme
from .harness import BOOTSTRAP, MethodResult, MethodSpec

REPORT_COLUMNS = ("group", "n", "n_treated", "n_control", "estimand", "method", "ci", "level",
                  "point", "se", "ci_lo", "ci_hi", "p_value", "boot_failures",
                  "separation_flag", "error")

METHOD_HELP = {
    "fs": "sandwich treating the propensity scores as fixed",
    "ms": "model-based sandwich (ATE, unaugmented)",
    "pes": "purely empirical sandwich (ATE, unaugmented)",
    "ns": "numeric-derivative sandwich over the full estimating-equation stack",
    "boot-std-fixed": "standard bootstrap, propensity scores carried from the original fit",
    "boot-strat-fixed": "arm-stratified bootstrap, propensity scores carried",
    "boot-std-est": "standard bootstrap, propensity model refit per replicate",
    "boot-strat-est": "arm-stratified bootstrap, propensity model refit per replicate",
}
CI_HELP = {
    "wald": "point +/- z * SE (any variance method)",
    "pct": "bootstrap percentile interval",
    "basic": "bootstrap basic (reflected percentile) interval",
    "bca": "bias-corrected and accelerated bootstrap interval",
}


def _split_list(text: str | None) -> list[str] | None:
    if text is None:
        return None
    return [t.strip() for t in text.split(",") if t.strip()]


def _parse_methods(variances: Sequence[str], cis: Sequence[str]) -> list[MethodSpec]:
    out = []
    for v in variances:
        for c in cis:
            if "/" not in v and c != "wald" and v not in BOOTSTRAP:
                continue  # bootstrap-only intervals skip analytic methods
            spec = MethodSpec.parse(v if "/" in v else f"{v}/{c}")
            if spec not in out:
                out.append(spec)
    if not out:
        raise InvalidMethod("no valid variance/interval combination requested")
    return out


def _report_rows(label: str, d: Dataset, estimator: PointEstimator, methods, B, seed, level,
                 workers) -> list[dict]:
    base = {"group": label, "n": d.n, "n_treated": d.n_treated, "n_control": d.n_control,
            "estimand": estimator.scheme.estimand, "level": level}
    try:
        fitted = estimator.fit(d)
    except PSWError as err:
        return [dict(base, method=m.variance, ci=m.ci, error=f"{type(err).__name__}: {err}",
                     _exit=err.exit_code) for m in methods]
    results = harness.evaluate_methods(d, estimator, methods, B, seed, (), fitted, level, workers)
    rows = []
    for m, res in zip(methods, results):
        row = dict(base, method=m.variance, ci=m.ci,
                   separation_flag=fitted.ps_fit.separation_flag)
        if isinstance(res, MethodResult):
            row.update(point=res.point, se=res.se, ci_lo=res.ci_lo, ci_hi=res.ci_hi,
                       p_value=res.p_value)
            row["boot_failures"] = res.boot_failures
        else:
            row.update(point=fitted.point, error=f"{type(res).__name__}: {res}",
                       _exit=res.exit_code)
        rows.append(row)
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_report(rows: list[dict], csv_path, json_path, stream) -> None:
    full = [{c: r.get(c) for c in REPORT_COLUMNS} for r in rows]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in full:
        w.writerow([_cell(r[c]) for c in REPORT_COLUMNS])
    if csv_path:
        Path(csv_path).write_text(buf.getvalue())
    if json_path:
        Path(json_path).write_text(json.dumps(full, indent=2) + "\n")
    if not csv_path and not json_path:
        stream.write(buf.getvalue())


def cmd_analyze(args) -> int:
    covs = _split_list(args.covariates)
    aug = _split_list(args.augment)
    extra = [c for c in [*(aug or []), args.subgroup] if c]
    d = load_csv(args.data, args.outcome, args.treatment, covs, extra)
    model_covs = tuple(covs) if covs is not None else tuple(
        c for c in d.covariate_names if c != args.subgroup and c not in (aug or ()))
    if aug is not None and not aug:
        aug = list(model_covs)
    methods = _parse_methods(_split_list(args.method) or ["ns"], _split_list(args.ci) or ["wald"])

    def run(label: str, data: Dataset, drop: str | None = None) -> list[dict]:
        ps = tuple(c for c in model_covs if c != drop)
        om = None if aug is None else tuple(c for c in aug if c != drop)
        used = tuple(dict.fromkeys([*ps, *(om or ())]))
        est = PointEstimator(WeightScheme.for_estimand(args.estimand), ps, om, args.per_arm,
                             args.separation)
        return _report_rows(label, data.select(used), est, methods, args.B, args.seed,
                            args.level, args.workers)

    rows = run("overall", d)
    if args.subgroup:
        for label, sub in subgroup_split(d, args.subgroup):
            rows += run(f"{args.subgroup}={label}", sub, args.subgroup)
    _write_report(rows, args.csv, args.json, sys.stdout)
    errors = [r for r in rows if r.get("error")]
    for r in errors:
        print(f"error in group {r['group']} ({r['method']}/{r['ci']}): {r['error']}",
              file=sys.stderr)
    return errors[0]["_exit"] if errors else 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.output_dir) if args.output_dir else cfg.output_dir
    workers = args.workers or cfg.workers
    out_dir.mkdir(parents=True, exist_ok=True)
    log = (out_dir / "run.log").open("w")

    def progress(res: harness.ScenarioResult) -> None:
        sc = res.scenario
        parts = []
        for m in res.metrics:
            ratio = m["se_ratio"]
            cov = m["coverage"]
            parts.append(f"{m['estimand']}:{m['method']} ratio="
                         f"{'NA' if ratio is None else f'{ratio:.3f}'} "
                         f"cov={'NA' if cov is None else f'{cov:.3f}'}")
        line = (f"scenario {sc.scenario_id} n={sc.n} pz={sc.pz:g} py0={sc.py0:g} "
                f"reps={sc.reps}: " + "; ".join(parts))
        print(line, flush=True)
        log.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {line}\n")
        log.flush()

    with log:
        log.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} start seed={args.seed} "
                  f"config={args.config} scenarios={len(cfg.scenarios)}\n")
        metrics, rows = harness.run_simulation(
            cfg.scenarios, args.seed, cfg.N, cfg.direction, cfg.augmentation, cfg.cache_dir,
            workers, progress)
        (out_dir / "metrics.csv").write_text(harness.metrics_csv_text(metrics))
        if cfg.reps_csv:
            (out_dir / "reps.csv").write_text(harness.reps_csv_text(rows))
        log.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} done\n")
    return 0


def cmd_calibrate(args) -> int:
    sp = dgp.build_superpopulation(args.pz, args.py0, args.seed, args.N, args.target_ate,
                                   args.direction)
    report = asdict(sp.calibration)
    report.update(N=sp.N, seed=args.seed, direction=args.direction,
                  realized_pz=float(sp.z.mean()), realized_py0=float(sp.y0.mean()))
    if args.save:
        dgp.save_superpopulation(sp, args.save)
    if args.export_csv:
        dgp.export_csv(sp, args.export_csv)
    print(json.dumps(report, indent=2))
    return 0


def cmd_methods(args) -> int:
    print("variance methods:")
    for k, v in METHOD_HELP.items():
        print(f"  {k:<17} {v}")
    print("interval methods:")
    for k, v in CI_HELP.items():
        print(f"  {k:<17} {v}")
    print("bootstrap-only intervals (pct, basic, bca) pair with: " + ", ".join(BOOTSTRAP))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pswinfer",
                                description="Propensity-score weighted effect estimation "
                                            "and variance estimation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="estimate a treatment effect from a CSV file")
    a.add_argument("data", help="CSV file with a header row")
    a.add_argument("--outcome", required=True, help="binary outcome column")
    a.add_argument("--treatment", required=True, help="binary treatment column")
    a.add_argument("--covariates", help="comma-separated PS covariates (default: all others)")
    a.add_argument("--estimand", default="ATE", choices=["ATE", "ATO", "ate", "ato"])
    a.add_argument("--augment", nargs="?", const="", default=None,
                   help="augment with an outcome model; optional comma-separated covariates "
                        "(default: the PS covariates)")
    a.add_argument("--per-arm", action="store_true", help="separate outcome model per arm")
    a.add_argument("--method", default="ns",
                   help="comma-separated variance methods (see `pswinfer methods`)")
    a.add_argument("--ci", default="wald", help="comma-separated interval methods")
    a.add_argument("-B", type=int, default=1000, help="bootstrap replicates")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--level", type=float, default=0.95)
    a.add_argument("--subgroup", help="also analyze each level of this column")
    a.add_argument("--separation", choices=["strict", "lenient"], default="strict",
                   help="quasi-separation policy for logistic fits")
    a.add_argument("--csv", help="write the report as CSV here")
    a.add_argument("--json", help="write the report as JSON here")
    a.add_argument("--workers", type=int, default=None,
                   help="bootstrap threads (default: $PSWINFER_WORKERS or 1)")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run a Monte Carlo simulation from a YAML config")
    s.add_argument("config")
    s.add_argument("--seed", type=int, required=True, help="master seed (required)")
    s.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: config, then $PSWINFER_WORKERS, then 1)")
    s.add_argument("--output-dir", help="override the config's output.dir")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("calibrate", help="calibrate and realize one super-population")
    c.add_argument("--pz", type=float, required=True)
    c.add_argument("--py0", type=float, required=True)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--N", type=int, default=dgp.DEFAULT_N)
    c.add_argument("--target-ate", type=float, default=dgp.TARGET_ATE)
    c.add_argument("--direction", choices=["above", "below"], default="above")
    c.add_argument("--save", help="save as <path>.npz plus a <path>.json sidecar")
    c.add_argument("--export-csv", help="also export the population as CSV")
    c.set_defaults(func=cmd_calibrate)

    m = sub.add_parser("methods", help="list variance and interval methods")
    m.set_defaults(func=cmd_methods)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "estimand", None):
        args.estimand = args.estimand.upper()
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return err.exit_code
    except PSWError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return err.exit_code
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
