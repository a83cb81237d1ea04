"""Command-line front end.

Subcommands:

    analyze          bias-adjusted analysis of one dataset (Table-style rows)
    selection-curve  export the fitted selection function on a t grid
    simulate         run a Monte Carlo scenario and write metrics CSV

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
A fit that merely fails to converge is reported as a row flag, not an error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings

import numpy as np

from ipwmeta import __version__
from ipwmeta.estimation import NoRootError, dl_fit, fit
from ipwmeta.inference import (SingularJacobianError, dl_sandwich, dl_wald_ci,
                               parametric_bootstrap, sandwich_covariance)
from ipwmeta.model import DatasetError, load_dataset
from ipwmeta.selection import (ALTERNATIVES, FAMILIES, SelectionModel, prob,
                               selection_statistics)
from ipwmeta.simulation import (GenerativeConfig, MethodSpec, load_config,
                                metrics_to_csv_rows, run_scenario)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

SCHEMA_VERSION = 1


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except DatasetError as exc:
        _emit_error("data", str(exc))
        return EXIT_DATA
    except FileNotFoundError as exc:
        _emit_error("data", str(exc))
        return EXIT_DATA
    except (NoRootError, SingularJacobianError, np.linalg.LinAlgError) as exc:
        _emit_error("numeric", str(exc))
        return EXIT_NUMERIC


def _emit_error(kind: str, message: str) -> None:
    print(json.dumps({"schema": SCHEMA_VERSION, "error": kind,
                      "message": message}), file=sys.stderr)


def _build_parser():
    p = argparse.ArgumentParser(prog="ipwmeta",
                                description="publication-bias-adjusted "
                                            "meta-analysis from registry data")
    p.add_argument("--version", action="version", version=f"ipwmeta {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="analyze one dataset")
    a.add_argument("--data", required=True, help="CSV dataset path")
    a.add_argument("--family", default="all",
                   choices=sorted(FAMILIES) + ["all"])
    a.add_argument("--ci", default="asymptotic",
                   choices=["asymptotic", "bootstrap", "both"])
    a.add_argument("--boot-b", type=int, default=1000)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--level", type=float, default=0.95)
    a.add_argument("--exp", action="store_true",
                   help="report the mean and its CI on the odds-ratio scale")
    a.add_argument("--baseline-dl", action="store_true",
                   help="include the unadjusted DL row")
    a.add_argument("--alternative", default="less", choices=list(ALTERNATIVES))
    a.add_argument("--format", default="table", choices=["table", "json", "csv"])
    a.add_argument("--threads", type=int, default=0,
                   help="0 = auto (bootstrap evaluation is vectorized; this "
                        "knob matters for simulate)")
    a.set_defaults(handler=_cmd_analyze)

    c = sub.add_parser("selection-curve", help="export fitted pi(t) on a grid")
    c.add_argument("--data", required=True)
    c.add_argument("--family", required=True, choices=sorted(FAMILIES))
    c.add_argument("--t-range", default="-3:3:0.01",
                   help="lo:hi:step (write --t-range=-3:3:0.01 so the leading "
                        "minus is not read as a flag)")
    c.add_argument("--level", type=float, default=0.95)
    c.add_argument("--alternative", default="less", choices=list(ALTERNATIVES))
    c.add_argument("--out", default=None, help="output CSV (default stdout)")
    c.set_defaults(handler=_cmd_selection_curve)

    s = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    s.add_argument("--config", default=None, help="scenario JSON document")
    s.add_argument("--mu", type=float, default=-0.50)
    s.add_argument("--tau", type=float, default=None)
    s.add_argument("--s-total", type=int, default=None)
    s.add_argument("--true-family", default=None, choices=sorted(FAMILIES))
    s.add_argument("--true-beta", default=None,
                   help="comma-separated, e.g. '2' or '-0.3,-1'")
    s.add_argument("--replicates", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--methods", default="dl:asymptotic,ipw:logistic1:bootstrap",
                   help="comma list of dl:CI or ipw:FAMILY:CI entries "
                        "(CI in asymptotic|bootstrap|none)")
    s.add_argument("--boot-b", type=int, default=1000)
    s.add_argument("--alternative", default="less", choices=list(ALTERNATIVES))
    s.add_argument("--scenario-id", default=None)
    s.add_argument("--out", default=None, help="metrics CSV (default stdout)")
    s.add_argument("--threads", type=int, default=0, help="0 = auto")
    s.set_defaults(handler=_cmd_simulate)
    return p


# ---------------------------------------------------------------- analyze

def _cmd_analyze(args) -> int:
    dataset = load_dataset(args.data)
    families = sorted(FAMILIES) if args.family == "all" else [args.family]
    rows = []
    diagnostics = []

    if args.baseline_dl:
        rows.append(_dl_row(dataset, args))

    for k, family in enumerate(families):
        est = fit(dataset, family, alternative=args.alternative)
        if args.ci in ("asymptotic", "both"):
            rows.append(_ipw_row(dataset, est, args, "asymptotic"))
        if args.ci in ("bootstrap", "both"):
            rows.append(_ipw_row(dataset, est, args, "bootstrap",
                                 seed=args.seed + k))
        diagnostics.append({
            "family": family,
            "beta_hat": [float(b) for b in est.beta_hat],
            "converged": bool(est.converged),
            "solver": est.solver_report.method,
            "residual": est.solver_report.residual,
            "tolerance": est.solver_report.tolerance,
            "at_bound": bool(est.solver_report.at_bound),
        })

    doc = {
        "schema": SCHEMA_VERSION,
        "dataset": {"path": args.data, "n_published": dataset.n_published,
                    "n_unpublished": dataset.n_unpublished,
                    "s_total": dataset.s_total},
        "level": args.level,
        "seed": args.seed,
        "exp_scale": bool(args.exp),
        "alternative": args.alternative,
        "rows": rows,
        "solver_diagnostics": diagnostics,
    }
    _print_analysis(doc, args.format)
    return EXIT_OK


def _transform(x, use_exp):
    if x is None:
        return None
    return float(math.exp(x)) if use_exp else float(x)


def _dl_row(dataset, args) -> dict:
    dl = dl_fit(dataset)
    (lo, hi), p = dl_wald_ci(dl, args.level)
    try:
        sw = dl_sandwich(dataset, dl, args.level)
        tau_ci = sw.wald_cis[0]
    except SingularJacobianError:
        tau_ci = (None, None)
    return {
        "method": "DL", "family": "", "ci_kind": "asymptotic",
        "estimate": _transform(dl.mu_hat, args.exp),
        "ci_lo": _transform(lo, args.exp), "ci_hi": _transform(hi, args.exp),
        "p_value": p,
        "tau2": dl.tau2_hat, "tau2_lo": tau_ci[0], "tau2_hi": tau_ci[1],
        "i2": dl.i2, "beta": None, "beta_ci": None,
        "converged": True, "n_failed": None,
    }


def _ipw_row(dataset, est, args, ci_kind, seed=0) -> dict:
    row = {
        "method": "IPW", "family": est.model.family, "ci_kind": ci_kind,
        "estimate": _transform(est.mu_hat, args.exp),
        "ci_lo": None, "ci_hi": None, "p_value": None,
        "tau2": est.tau2_hat, "tau2_lo": None, "tau2_hi": None,
        "i2": est.i2_ipw,
        "beta": [float(b) for b in est.beta_hat], "beta_ci": None,
        "converged": bool(est.converged), "n_failed": None,
    }
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if ci_kind == "asymptotic":
            try:
                sw = sandwich_covariance(dataset, est, level=args.level)
            except SingularJacobianError:
                return row
            nb = est.model.arity
            row["ci_lo"] = _transform(sw.wald_cis[-1][0], args.exp)
            row["ci_hi"] = _transform(sw.wald_cis[-1][1], args.exp)
            row["p_value"] = sw.wald_p_mu
            row["tau2_lo"], row["tau2_hi"] = sw.wald_cis[nb]
            row["beta_ci"] = [list(sw.wald_cis[j]) for j in range(nb)]
        else:
            boot = parametric_bootstrap(dataset, est, b_replicates=args.boot_b,
                                        seed=seed, level=args.level)
            row["ci_lo"] = _transform(boot.ci_mu[0], args.exp)
            row["ci_hi"] = _transform(boot.ci_mu[1], args.exp)
            row["tau2_lo"], row["tau2_hi"] = boot.ci_tau2
            row["n_failed"] = boot.n_failed
    return row


_CSV_COLUMNS = ["method", "family", "ci_kind", "estimate", "ci_lo", "ci_hi",
                "p_value", "tau2", "tau2_lo", "tau2_hi", "i2", "beta",
                "beta_ci", "converged", "n_failed"]


def _print_analysis(doc, fmt) -> None:
    if fmt == "json":
        print(json.dumps(doc, indent=2))
        return
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_CSV_COLUMNS)
        for row in doc["rows"]:
            writer.writerow([_csv_cell(row[c]) for c in _CSV_COLUMNS])
        sys.stdout.write(buf.getvalue())
        return
    d = doc["dataset"]
    print(f"dataset: N={d['n_published']} published, M={d['n_unpublished']} "
          f"unpublished, S={d['s_total']}  (level {doc['level']:.0%}, "
          f"{'OR' if doc['exp_scale'] else 'log'} scale)")
    hdr = f"{'method':8s} {'family':11s} {'ci':11s} {'estimate':>9s} " \
          f"{'ci_lo':>8s} {'ci_hi':>8s} {'p':>7s} {'tau2':>7s} " \
          f"{'tau2_hi':>8s} {'i2':>6s} {'conv':>5s}"
    print(hdr)
    print("-" * len(hdr))
    for r in doc["rows"]:
        print(f"{r['method']:8s} {r['family'] or '-':11s} {r['ci_kind']:11s} "
              f"{_cell(r['estimate']):>9s} {_cell(r['ci_lo']):>8s} "
              f"{_cell(r['ci_hi']):>8s} {_cell(r['p_value'], 3):>7s} "
              f"{_cell(r['tau2']):>7s} {_cell(r['tau2_hi']):>8s} "
              f"{_cell(r['i2']):>6s} {str(r['converged'])[0]:>5s}")


def _cell(x, nd=3):
    return "-" if x is None else f"{x:.{nd}f}"


def _csv_cell(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return int(x)
    if isinstance(x, list):
        return json.dumps(x)
    if isinstance(x, float):
        return repr(x)
    return x


# -------------------------------------------------------- selection-curve

def _cmd_selection_curve(args) -> int:
    dataset = load_dataset(args.data)
    lo, hi, step = _parse_range(args.t_range)
    est = fit(dataset, args.family, alternative=args.alternative)
    sigma_ref = float(np.median(dataset.arrays()["se"]))
    beta_ci = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            sw = sandwich_covariance(dataset, est, level=args.level)
            beta_ci = [list(sw.wald_cis[j]) for j in range(est.model.arity)]
        except SingularJacobianError:
            pass

    grid = np.arange(lo, hi + step / 2.0, step)
    t_sel = selection_statistics(grid, np.ones_like(grid), args.family,
                                 args.alternative)
    pi = prob(est.model, t_sel, np.full_like(grid, sigma_ref))

    out = io.StringIO()
    out.write(f"# family={args.family}\n")
    out.write(f"# beta_hat={json.dumps([float(b) for b in est.beta_hat])}\n")
    out.write(f"# beta_ci={json.dumps(beta_ci)}\n")
    out.write(f"# converged={est.converged}\n")
    out.write(f"# alternative={args.alternative}\n")
    out.write(f"# sigma_ref={sigma_ref!r}\n")
    out.write("t,pi\n")
    for tv, pv in zip(grid, pi):
        out.write(f"{tv:.6f},{float(pv)!r}\n")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(out.getvalue())
    else:
        sys.stdout.write(out.getvalue())
    return EXIT_OK


def _parse_range(spec: str):
    try:
        lo, hi, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise DatasetError(f"bad --t-range {spec!r}; expected lo:hi:step") from None
    if step <= 0 or hi <= lo:
        raise DatasetError(f"bad --t-range {spec!r}; need lo < hi and step > 0")
    return lo, hi, step


# ---------------------------------------------------------------- simulate

def _cmd_simulate(args) -> int:
    try:
        if args.config:
            cfg, methods = load_config(args.config)
        else:
            cfg, methods = _inline_config(args)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"ipwmeta simulate: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        _emit_error("data", str(exc))
        return EXIT_DATA

    def progress(done, total):
        if done == total or done % max(1, total // 10) == 0:
            print(f"replicate {done}/{total}", file=sys.stderr)

    rows = run_scenario(cfg, methods, threads=args.threads,
                        scenario_id=args.scenario_id, progress=progress)
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(metrics_to_csv_rows(rows))
    try:
        if args.out:
            with open(args.out, "w", newline="", encoding="utf-8") as fh:
                fh.write(buf.getvalue())
        else:
            sys.stdout.write(buf.getvalue())
    except OSError as exc:
        _emit_error("data", f"cannot write {args.out}: {exc}")
        return EXIT_DATA
    return EXIT_OK


def _inline_config(args):
    missing = [name for name, v in (("--tau", args.tau),
                                    ("--s-total", args.s_total),
                                    ("--true-family", args.true_family),
                                    ("--true-beta", args.true_beta),
                                    ("--replicates", args.replicates)) if v is None]
    if missing:
        raise ValueError(f"missing {', '.join(missing)} (or use --config)")
    beta = np.array([float(x) for x in args.true_beta.split(",")])
    cfg = GenerativeConfig(mu=args.mu, tau=args.tau, s_total=args.s_total,
                           selection=SelectionModel(args.true_family, beta),
                           seed=args.seed, n_replicates=args.replicates,
                           alternative=args.alternative)
    methods = []
    for spec in args.methods.split(","):
        parts = spec.strip().split(":")
        if parts[0] == "dl":
            methods.append(MethodSpec("dl", ci=parts[1] if len(parts) > 1
                                      else "asymptotic"))
        elif parts[0] == "ipw":
            if len(parts) < 2:
                raise ValueError(f"bad method spec {spec!r}")
            methods.append(MethodSpec("ipw", family=parts[1],
                                      ci=parts[2] if len(parts) > 2 else "asymptotic",
                                      boot_b=args.boot_b))
        else:
            raise ValueError(f"bad method spec {spec!r}")
    return cfg, methods


if __name__ == "__main__":
    sys.exit(main())
