"""Command-line front end: estimate, bandwidth, placebo, simulate.

Reports are built once as a JSON-serializable dict; the table and CSV
formats are renderings of the same dict, so every number is identical
across output formats.  Exit codes: 0 success, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .bandwidth import select
from .data import load_csv, validate
from .errors import ConfigError, EstimationError, RdcovError
from .estimators import DIAGNOSTIC_KINDS, EstimatorKind, estimate
from .inference import VarianceMethod, placebo_tests, robust_ci
from .locfit import Kernel, LocalFitSpec
from .simulate import DgpSpec, get_preset, list_presets, load_dgp_config, run_study

_BWSELECT = {"mserd": "mse", "cerrd": "cer"}


def _fmt(value, digits: int = 6) -> str:
    if value is None:
        return "--"
    if isinstance(value, float):
        return format(value, f".{digits}g")
    return str(value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdcov",
        description=(
            "Covariate-adjusted regression discontinuity estimation with "
            "robust bias-corrected inference."
        ),
    )
    parser.add_argument("--version", action="version", version=f"rdcov {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_data_flags(p, covs_required=False):
        p.add_argument("--data", required=True, help="input CSV file")
        p.add_argument("--outcome", required=True, help="outcome column name")
        p.add_argument("--score", required=True, help="score (running variable) column")
        p.add_argument(
            "--covs",
            default="",
            required=covs_required,
            help="comma-separated covariate column names",
        )
        p.add_argument("--cluster", default=None, help="cluster id column")
        p.add_argument("--cutoff", type=float, default=0.0, help="cutoff on the raw score")

    def add_fit_flags(p):
        p.add_argument("--kernel", default="tri", choices=["tri", "uni", "epa"])
        p.add_argument("--p", type=int, default=1, help="local polynomial order")
        p.add_argument("--vce", default="nn", choices=[m.value for m in VarianceMethod])
        p.add_argument("--nn-neighbors", type=int, default=3)
        p.add_argument(
            "--cluster-df-adjust",
            action="store_true",
            help="apply the G/(G-1) multiplier to the cluster-robust variance",
        )
        p.add_argument("--level", type=float, default=0.95)
        p.add_argument("--format", default="table", choices=["table", "json", "csv"])

    est = sub.add_parser("estimate", help="point estimates and robust CIs")
    add_data_flags(est)
    add_fit_flags(est)
    est.add_argument("--h", type=float, default=None, help="manual main bandwidth")
    est.add_argument("--b", type=float, default=None, help="manual preliminary bandwidth")
    est.add_argument("--bwselect", default=None, choices=sorted(_BWSELECT))
    est.add_argument(
        "--kind",
        default="covadj",
        choices=[k.value for k in EstimatorKind],
        help="covariate-adjusted estimator variant for the adjusted column",
    )

    bw = sub.add_parser("bandwidth", help="data-driven bandwidth selection")
    add_data_flags(bw)
    add_fit_flags(bw)
    bw.add_argument("--bwselect", default="mserd", choices=sorted(_BWSELECT))
    bw.add_argument("--kind", default="covadj", choices=["standard", "covadj"])

    pl = sub.add_parser("placebo", help="balance tests using covariates as outcomes")
    add_data_flags(pl, covs_required=True)
    add_fit_flags(pl)

    sim = sub.add_parser("simulate", help="Monte Carlo study")
    sim.add_argument(
        "--dgp",
        required=True,
        help=f"preset name ({', '.join(list_presets())}) or path to a JSON config",
    )
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--reps", type=int, required=True)
    sim.add_argument("--methods", default="standard,covadj")
    sim.add_argument("--bwselect", default="mserd", choices=sorted(_BWSELECT))
    sim.add_argument("--h", type=float, default=None, help="fixed bandwidth instead of selection")
    sim.add_argument("--b", type=float, default=None)
    sim.add_argument("--kernel", default="tri", choices=["tri", "uni", "epa"])
    sim.add_argument("--p", type=int, default=1)
    sim.add_argument("--vce", default="nn", choices=[m.value for m in VarianceMethod])
    sim.add_argument("--level", type=float, default=0.95)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--format", default="table", choices=["table", "json", "csv"])
    return parser


def _load(args):
    covs = [c for c in args.covs.split(",") if c.strip()] if args.covs else []
    schema = {"outcome": args.outcome, "score": args.score, "covariates": covs}
    if args.cluster:
        schema["cluster"] = args.cluster
    if args.vce == "cluster" and not args.cluster:
        raise ConfigError("--vce cluster requires a --cluster column")
    return load_csv(args.data, schema, args.cutoff)


def _column_report(data, kind, h, b, args, other_length=None):
    spec = LocalFitSpec(h=h, kernel=Kernel.parse(args.kernel), p=args.p)
    column = {"kind": kind.value, "h": h, "b": b}
    kwargs = dict(
        method=args.vce,
        level=args.level,
        kind=kind,
        nn_neighbors=args.nn_neighbors,
        cluster_adjust=args.cluster_df_adjust,
    )
    separate = robust_ci(data, spec, b=b, **kwargs)
    same = robust_ci(data, spec, b=h, **kwargs)
    column["point_estimate"] = separate.tau
    column["n_left"], column["n_right"] = separate.effective_n
    for label, res in (("separate_b", separate), ("b_equals_h", same)):
        block = {
            "bias_corrected_estimate": res.tau_bc,
            "robust_ci": [res.ci_low, res.ci_high],
            "ci_length": res.ci_length,
            "robust_p_value": res.p_value,
        }
        if other_length is not None:
            block["ci_length_change_pct"] = (
                (res.ci_length - other_length[label]) / other_length[label] * 100.0
            )
        block["notes"] = list(res.notes)
        column[label] = block
    return column


def _run_estimate(args) -> dict:
    if args.h is not None and args.bwselect is not None:
        raise ConfigError("a manual --h requires no --bwselect; pass one or the other")
    if args.h is None and args.b is not None:
        raise ConfigError("--b without --h is ambiguous; pass both or neither")
    data = _load(args)
    diagnostics = validate(data)
    kernel = Kernel.parse(args.kernel)
    kind = EstimatorKind(args.kind)
    notes = []
    if kind.requires_covariates and data.d == 0:
        notes.append("no covariates supplied; reporting the standard estimator only")
        kind = EstimatorKind.STANDARD

    rule = _BWSELECT[args.bwselect] if args.bwselect else "mse"
    report = {
        "command": "estimate",
        "data": args.data,
        "cutoff": args.cutoff,
        "n": data.n,
        "rows_dropped": data.n_dropped,
        "kernel": kernel.value,
        "p": args.p,
        "vce": args.vce,
        "level": args.level,
        "bandwidth_rule": "manual" if args.h is not None else args.bwselect or "mserd",
        "diagnostics": diagnostics.to_dict(),
        "columns": {},
        "notes": notes,
    }

    def bandwidths(for_kind):
        if args.h is not None:
            if args.b is None:
                notes.append("manual h with no b: using b = h")
            return args.h, (args.b if args.b is not None else args.h)
        sel = select(
            data,
            kind=for_kind,
            kernel=kernel,
            p=args.p,
            vce=args.vce,
            rule=rule,
            nn_neighbors=args.nn_neighbors,
            cluster_adjust=args.cluster_df_adjust,
        )
        notes.extend(sel.notes)
        return sel.h, sel.b

    h_std, b_std = bandwidths(EstimatorKind.STANDARD)
    standard = _column_report(data, EstimatorKind.STANDARD, h_std, b_std, args)
    report["columns"]["standard"] = standard

    if kind == EstimatorKind.STANDARD or data.d == 0:
        return report

    if kind in (EstimatorKind.COVADJ, EstimatorKind.DEMEANED_COMMON):
        h_adj, b_adj = bandwidths(EstimatorKind.COVADJ)
        lengths = {
            label: standard[label]["ci_length"] for label in ("separate_b", "b_equals_h")
        }
        adjusted = _column_report(data, kind, h_adj, b_adj, args, other_length=lengths)
        report["columns"]["covariate_adjusted"] = adjusted
    else:
        # Interacted / group-demeaned variants: point estimate only.
        h_adj, b_adj = bandwidths(EstimatorKind.COVADJ)
        spec = LocalFitSpec(h=h_adj, kernel=kernel, p=args.p)
        point = estimate(data, kind, spec)
        report["columns"]["covariate_adjusted"] = {
            "kind": kind.value,
            "h": h_adj,
            "b": b_adj,
            "point_estimate": point.tau,
            "n_left": point.effective_n[0],
            "n_right": point.effective_n[1],
            "notes": list(point.notes),
        }
        if kind in DIAGNOSTIC_KINDS:
            notes.append(
                f"{kind.value} is a diagnostic - not recommended; robust inference "
                "is reported for the standard column only"
            )
    return report


def _run_bandwidth(args) -> dict:
    data = _load(args)
    sel = select(
        data,
        kind=EstimatorKind(args.kind),
        kernel=Kernel.parse(args.kernel),
        p=args.p,
        vce=args.vce,
        rule=_BWSELECT[args.bwselect],
        nn_neighbors=args.nn_neighbors,
        cluster_adjust=args.cluster_df_adjust,
    )
    report = {"command": "bandwidth", "data": args.data, "cutoff": args.cutoff}
    report.update(sel.to_dict())
    return report


def _run_placebo(args) -> dict:
    data = _load(args)
    if data.d == 0:
        rows = []
    else:
        rows = placebo_tests(
            data,
            kernel=Kernel.parse(args.kernel),
            p=args.p,
            method=args.vce,
            level=args.level,
        )
    return {
        "command": "placebo",
        "data": args.data,
        "cutoff": args.cutoff,
        "level": args.level,
        "kernel": args.kernel,
        "p": args.p,
        "vce": args.vce,
        "rows": [r.to_dict() for r in rows],
    }


def _run_simulate(args) -> dict:
    if args.dgp in list_presets():
        dgp = get_preset(args.dgp)
    else:
        dgp = load_dgp_config(args.dgp)
    if args.seed is not None:
        dgp = dgp.with_seed(args.seed)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    bw_rule = "fixed" if args.h is not None else _BWSELECT[args.bwselect]
    study = run_study(
        dgp,
        n=args.n,
        reps=args.reps,
        methods=methods,
        bw_rule=bw_rule,
        h=args.h,
        b=args.b,
        kernel=Kernel.parse(args.kernel),
        p=args.p,
        vce=args.vce,
        level=args.level,
        workers=args.workers,
    )
    report = {"command": "simulate"}
    report.update(study.to_dict())
    return report


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _estimate_table(report: dict) -> str:
    columns = report["columns"]
    names = list(columns)
    labels = {"standard": "Standard", "covariate_adjusted": "Cov-adjusted"}
    width = 18
    lines = [
        f"Sharp RD estimate (cutoff = {_fmt(report['cutoff'])}, kernel = "
        f"{report['kernel']}, p = {report['p']}, vce = {report['vce']})",
        f"n = {report['n']}  (rows dropped: {report['rows_dropped']})",
        "",
    ]
    header = f"{'':34}" + "".join(f"{labels.get(c, c):>{width}}" for c in names)
    lines.append(header)

    def row(label, values):
        return f"{label:34}" + "".join(f"{v:>{width}}" for v in values)

    lines.append(row("Point estimate", [_fmt(columns[c]["point_estimate"]) for c in names]))
    for block, title in (
        ("separate_b", "h and b selected separately"),
        ("b_equals_h", "b = h"),
    ):
        lines.append(f"--- {title} ---")
        for key, label in (
            ("robust_ci", f"Robust {report['level']:.0%} CI"),
            ("ci_length_change_pct", "CI length change (%)"),
            ("robust_p_value", "Robust p-value"),
        ):
            values = []
            for c in names:
                blk = columns[c].get(block)
                if blk is None or key not in blk:
                    values.append("--")
                elif key == "robust_ci":
                    lo, hi = blk[key]
                    values.append(f"[{_fmt(lo, 5)}, {_fmt(hi, 5)}]")
                else:
                    values.append(_fmt(blk[key]))
            lines.append(row(label, values))
    lines.append(row("h", [_fmt(columns[c].get("h")) for c in names]))
    lines.append(row("b", [_fmt(columns[c].get("b")) for c in names]))
    lines.append(
        row(
            "N (left | right)",
            [f"{columns[c].get('n_left')} | {columns[c].get('n_right')}" for c in names],
        )
    )
    for note in report["notes"] + report["diagnostics"]["warnings"]:
        lines.append(f"note: {note}")
    return "\n".join(lines)


def _placebo_table(report: dict) -> str:
    lines = [
        f"Covariate balance (placebo outcomes), level = {report['level']:.0%}",
        f"{'covariate':16}{'RD effect':>12}{'robust CI':>26}{'p-value':>10}"
        f"{'h':>10}{'b':>10}",
    ]
    for r in report["rows"]:
        lo, hi = r["robust_ci"]
        lines.append(
            f"{r['covariate']:16}{_fmt(r['rd_effect'], 5):>12}"
            f"{'[' + _fmt(lo, 5) + ', ' + _fmt(hi, 5) + ']':>26}"
            f"{_fmt(r['robust_p_value'], 4):>10}{_fmt(r['h'], 4):>10}{_fmt(r['b'], 4):>10}"
        )
    if not report["rows"]:
        lines.append("(no covariates supplied)")
    return "\n".join(lines)


def _bandwidth_table(report: dict) -> str:
    lines = [
        f"Bandwidth selection ({report['rule']}, kernel = {report['kernel']}, "
        f"p = {report['p']}, vce = {report['vce']})",
        f"h = {_fmt(report['h'])}",
        f"b = {_fmt(report['b'])}",
    ]
    pilot = report.get("pilot")
    if pilot:
        lines.append(
            f"pilot bandwidths: variance {_fmt(pilot['variance_pilot'])}, derivative "
            f"{_fmt(pilot['derivative_pilot'])} (c0 = {_fmt(pilot['pilot_constant'])}, "
            f"sd(x) = {_fmt(pilot['sigma_x'])})"
        )
        lines.append(
            f"pilot b-stage: bias constant {_fmt(pilot['b_stage']['bias_constant'])}, "
            f"variance constant {_fmt(pilot['b_stage']['variance_constant'])}"
            + (" [regularized]" if pilot["b_stage"]["regularized"] else "")
        )
        lines.append(
            f"pilot h-stage: bias constant {_fmt(pilot['h_stage']['bias_constant'])}, "
            f"variance constant {_fmt(pilot['h_stage']['variance_constant'])}"
            + (" [regularized]" if pilot["h_stage"]["regularized"] else "")
        )
    for note in report.get("notes", []):
        lines.append(f"note: {note}")
    return "\n".join(lines)


def _simulate_table(report: dict) -> str:
    lines = [
        f"Monte Carlo study: dgp = {report['dgp'] or 'custom'}, n = {report['n']}, "
        f"reps = {report['reps']}, bw = {report['bw_rule']}, "
        f"true effect = {_fmt(report['true_tau'])}",
        f"{'method':>14}{'bias':>12}{'variance':>12}{'mse':>12}"
        f"{'coverage':>10}{'ci length':>12}{'mean h':>10}{'fail':>6}",
    ]
    for name, s in report["methods"].items():
        lines.append(
            f"{name:>14}{_fmt(s['bias'], 4):>12}{_fmt(s['variance'], 4):>12}"
            f"{_fmt(s['mse'], 4):>12}{_fmt(s['coverage'], 4):>10}"
            f"{_fmt(s['mean_ci_length'], 4):>12}{_fmt(s['mean_h'], 4):>10}"
            f"{s['n_failed']:>6}"
        )
    return "\n".join(lines)


def _flatten(prefix: str, value, rows: list):
    if isinstance(value, dict):
        for key, item in value.items():
            _flatten(f"{prefix}.{key}" if prefix else str(key), item, rows)
    elif isinstance(value, list) and value and isinstance(value[0], dict):
        for i, item in enumerate(value):
            _flatten(f"{prefix}[{i}]", item, rows)
    else:
        rows.append((prefix, value))


def render(report: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report, indent=2)
    if fmt == "csv":
        rows: list = []
        _flatten("", report, rows)
        out = ["field,value"]
        for key, value in rows:
            if isinstance(value, list):
                value = ";".join(str(v) for v in value)
            text = str(value)
            if "," in text or '"' in text:
                text = '"' + text.replace('"', '""') + '"'
            out.append(f"{key},{text}")
        return "\n".join(out)
    tables = {
        "estimate": _estimate_table,
        "placebo": _placebo_table,
        "bandwidth": _bandwidth_table,
        "simulate": _simulate_table,
    }
    return tables[report["command"]](report)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    runners = {
        "estimate": _run_estimate,
        "bandwidth": _run_bandwidth,
        "placebo": _run_placebo,
        "simulate": _run_simulate,
    }
    try:
        report = runners[args.subcommand](args)
    except ConfigError as exc:
        print(f"rdcov: configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"rdcov: file not found: {exc}", file=sys.stderr)
        return 2
    except EstimationError as exc:
        print(f"rdcov: estimation failed: {exc}", file=sys.stderr)
        return 3
    except RdcovError as exc:  # pragma: no cover - safety net
        print(f"rdcov: error: {exc}", file=sys.stderr)
        return 3
    print(render(report, getattr(args, "format", "table")))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
