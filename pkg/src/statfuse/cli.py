"""Command-line front end.

Every subcommand reads CSV inputs, runs one pipeline stage and writes its
outputs together with ``<out>.manifest.json`` (input checksums, resolved
configuration, library version, seed). Exit codes: 0 success, 1 data or
configuration error, 2 numerical failure. Errors are printed to stderr as
a single JSON line.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import warnings
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .balance import build_design, select_balanced
from .distance import cost_matrix
from .errors import ConfigurationError, StatfuseError
from .estimate import contingency, covariance_yz, fuse, mean_estimate, predict, representation_name
from .frame import fmt, load_frame, read_levels
from .harmonize import harmonize_pair
from .sim import GaussianSpec, parse_key_values, run_monte_carlo
from .transport import load_plan, save_plan, solve_transport, verify_plan

#: options every frame-reading subcommand understands
FRAME_OPTS = ("recipient", "donor", "id_col", "x_cols", "y_cols", "z_cols", "weight_col")
DEFAULTS = {
    "id_col": "id",
    "y_cols": "",
    "z_cols": "",
    "metric": "mahalanobis",
    "cost": "d",
    "kind": "covariance",
    "representation": "pairwise",
    "direction": "s1",
    "tol": 1e-8,
    "max_iter": 100,
    "jobs": 1,
    "truth": "model",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _diagnostic("UsageError", message, 1)
        raise SystemExit(1)


def _diagnostic(kind: str, message: str, code: int) -> None:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)


def _frame_args(p):
    p.add_argument("--recipient", help="recipient CSV (S1)")
    p.add_argument("--donor", help="donor CSV (S2)")
    p.add_argument("--id-col")
    p.add_argument("--x-cols", help="comma-separated matching variables")
    p.add_argument("--y-cols", help="comma-separated recipient-only variables")
    p.add_argument("--z-cols", help="comma-separated donor-only variables")
    p.add_argument("--weight-col")
    p.add_argument("--tol", type=float, help="calibration tolerance")
    p.add_argument("--max-iter", type=int, help="calibration iteration cap")


def _cost_args(p):
    p.add_argument("--metric", choices=("euclidean", "mahalanobis"))
    p.add_argument("--cost", choices=("d", "d2"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="statfuse", description="Statistical matching of two weighted samples.")
    parser.add_argument("--version", action="version", version=f"statfuse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value file; explicit flags take precedence")
        return p

    p = cmd("harmonize", "calibrate both samples to the composite totals")
    _frame_args(p)
    p.add_argument("--out-weights", help="two comma-separated output paths (recipient,donor)")

    p = cmd("match", "solve the optimal-transport matching")
    _frame_args(p)
    _cost_args(p)
    p.add_argument("--out", help="plan CSV")

    p = cmd("predict", "weighted-average predictions from a stored plan")
    _frame_args(p)
    p.add_argument("--plan")
    p.add_argument("--direction", choices=("s1", "s2"))
    p.add_argument("--out")

    p = cmd("impute", "one donor per recipient by balanced sampling on a stored plan")
    _frame_args(p)
    p.add_argument("--plan")
    p.add_argument("--direction", choices=("s1", "s2"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = cmd("estimate", "joint estimates from a stored plan")
    _frame_args(p)
    p.add_argument("--plan")
    p.add_argument("--kind", choices=("contingency", "covariance", "mean"))
    p.add_argument("--representation")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = cmd("simulate-gaussian", "Monte Carlo comparison on the Gaussian model")
    p.add_argument("--replicates", type=int)
    p.add_argument("--n1", type=int)
    p.add_argument("--n2", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--truth", choices=("model", "population"))
    p.add_argument("--jobs", type=int)
    _cost_args(p)
    p.add_argument("--out")

    p = cmd("verify", "re-certify a stored plan")
    _frame_args(p)
    _cost_args(p)
    p.add_argument("--plan")
    return parser


# --- configuration -----------------------------------------------------------


def resolve(args: argparse.Namespace) -> tuple[dict, dict]:
    """Merge ``--config`` under explicit flags; return (options, leftover keys)."""
    opts = {k: v for k, v in vars(args).items() if k not in ("config", "command")}
    extra = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        for k, raw in parse_key_values(path.read_text(encoding="utf-8")).items():
            if k in opts:
                if opts[k] is None:
                    opts[k] = _typed(k, raw)
            else:
                extra[k] = raw
    for k, v in DEFAULTS.items():
        if k in opts and opts[k] is None:
            opts[k] = v
    return opts, extra


def _typed(key, raw):
    conv = {"tol": float, "max_iter": int, "seed": int, "replicates": int, "n1": int, "n2": int,
            "jobs": int}.get(key, str)
    try:
        return conv(raw)
    except ValueError:
        raise ConfigurationError(f"config key {key!r}: cannot parse {raw!r}") from None


def _need(opts, *keys):
    for k in keys:
        if opts.get(k) in (None, ""):
            raise ConfigurationError(f"missing required option --{k.replace('_', '-')}")


def _cols(s) -> list[str]:
    return [c.strip() for c in (s or "").split(",") if c.strip()]


def _no_extra(extra):
    if extra:
        raise ConfigurationError(f"unknown config keys: {', '.join(sorted(extra))}")


def load_frames(opts):
    _need(opts, *FRAME_OPTS[:2], "x_cols", "weight_col")
    x = _cols(opts["x_cols"])
    levels = {}
    for path in (opts["recipient"], opts["donor"]):
        for c, lv in read_levels(path, x).items():
            levels.setdefault(c, set()).update(lv)
    common = dict(id_col=opts["id_col"], x_cols=x, weight_col=opts["weight_col"], levels=levels)
    rec = load_frame(opts["recipient"], extra_cols=_cols(opts["y_cols"]), role="recipient", **common)
    don = load_frame(opts["donor"], extra_cols=_cols(opts["z_cols"]), role="donor", **common)
    return rec, don


def _pair(opts, rec, don):
    return harmonize_pair(rec, don, tol=opts["tol"], max_iter=opts["max_iter"])


# --- output helpers ----------------------------------------------------------


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out, command, opts, inputs, outputs) -> Path:
    path = Path(str(out) + ".manifest.json")
    doc = {
        "tool": "statfuse",
        "version": __version__,
        "command": command,
        "seed": opts.get("seed"),
        "config": {k: v for k, v in sorted(opts.items())},
        "inputs": {str(p): sha256(p) for p in inputs if p},
        "outputs": [str(p) for p in outputs],
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_rows(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


def _cell(v):
    return fmt(v) if isinstance(v, (float, np.floating)) else str(v)


def _decoded_columns(frame, names, mat, columns):
    """Original columns (categoricals collapsed to their level) for ``mat``."""
    out, j = [], 0
    for c in columns:
        if c in frame.categories:
            lv = frame.categories[c]
            out.append((c, [lv[int(i)] for i in np.argmax(mat[:, j:j + len(lv)], axis=1)]))
            j += len(lv)
        else:
            out.append((c, [fmt(v) for v in mat[:, j]]))
            j += 1
    return out


def _plan_for(opts, rec, don):
    _need(opts, "plan")
    return load_plan(opts["plan"], rec.ids, don.ids)


# --- subcommands -------------------------------------------------------------


def cmd_harmonize(opts, extra):
    _no_extra(extra)
    _need(opts, "out_weights")
    outs = _cols(opts["out_weights"])
    if len(outs) != 2:
        raise ConfigurationError("--out-weights needs two comma-separated paths")
    rec, don = load_frames(opts)
    pair = _pair(opts, rec, don)
    for path, frame, w in ((outs[0], rec, pair.w1), (outs[1], don, pair.w2)):
        _write_rows(path, [opts["id_col"], opts["weight_col"]], zip(frame.ids, map(fmt, w)))
    r = pair.report
    print(json.dumps({"event": "harmonize", "alpha_star": r["alpha_star"],
                      "n_hat_star": r["n_hat_star"], "n12": r["n12"],
                      "x_hat_star": pair.x_hat_star.tolist()}))
    for side in ("recipient", "donor"):
        print(json.dumps({"event": "calibration", "sample": side, **r[side]}))
    write_manifest(outs[0], "harmonize", opts, [opts["recipient"], opts["donor"]], outs)
    return 0


def cmd_match(opts, extra):
    _no_extra(extra)
    _need(opts, "out")
    rec, don = load_frames(opts)
    pair = _pair(opts, rec, don)
    cost = cost_matrix(pair, opts["metric"], opts["cost"])
    plan = solve_transport(cost, pair)
    save_plan(plan, opts["out"])
    cert = verify_plan(plan, cost, pair)
    print(json.dumps({"event": "match", "objective": plan.objective, "nnz": plan.nnz,
                      "iterations": plan.iterations, "certified": cert.passed,
                      "duality_gap": cert.duality_gap}))
    write_manifest(opts["out"], "match", opts, [opts["recipient"], opts["donor"]], [opts["out"]])
    return 0


def cmd_predict(opts, extra):
    _no_extra(extra)
    _need(opts, "out")
    rec, don = load_frames(opts)
    plan = _plan_for(opts, rec, don)
    if opts["direction"] == "s1":
        base, src, w, id_name = rec, don, plan.row_sums(), opts["id_col"]
    else:
        base, src, w, id_name = don, rec, plan.col_sums(), opts["id_col"]
    xh, vh = predict(plan, src, opts["direction"])
    cols = _decoded_columns(base, base.x_names, base.x, base.x_columns)
    cols += _decoded_columns(base, base.extra_names, base.extra, base.extra_columns)
    header = [id_name] + [c for c, _ in cols] + [opts["weight_col"]]
    header += [f"pred_{n}" for n in src.x_names] + [f"pred_{n}" for n in src.extra_names]
    rows = []
    for k in range(base.n):
        rows.append([base.ids[k]] + [v[k] for _, v in cols] + [fmt(w[k])]
                    + [fmt(t) for t in xh[k]] + [fmt(t) for t in vh[k]])
    _write_rows(opts["out"], header, rows)
    write_manifest(opts["out"], "predict", opts,
                   [opts["recipient"], opts["donor"], opts["plan"]], [opts["out"]])
    return 0


def cmd_impute(opts, extra):
    _no_extra(extra)
    _need(opts, "out", "seed")
    rec, don = load_frames(opts)
    plan = _plan_for(opts, rec, don)
    direction = opts["direction"]
    outcome = select_balanced(build_design(plan, rec, don, direction=direction), opts["seed"])
    if direction == "s1":
        base, src, w, link = rec, don, plan.row_sums(), "donor_id"
    else:
        base, src, w, link = don, rec, plan.col_sums(), "recipient_id"
    sel = outcome.selection
    own = _decoded_columns(base, base.x_names, base.x, base.x_columns)
    own += _decoded_columns(base, base.extra_names, base.extra, base.extra_columns)
    prefix = "donor_" if direction == "s1" else "recipient_"
    got = _decoded_columns(src, src.x_names, src.x[sel], src.x_columns)
    got = [(prefix + c, v) for c, v in got]
    got += _decoded_columns(src, src.extra_names, src.extra[sel], src.extra_columns)
    header = [opts["id_col"]] + [c for c, _ in own] + [opts["weight_col"]] + [c for c, _ in got] + [link]
    rows = []
    for k in range(base.n):
        rows.append([base.ids[k]] + [v[k] for _, v in own] + [fmt(w[k])]
                    + [v[k] for _, v in got] + [src.ids[sel[k]]])
    _write_rows(opts["out"], header, rows)
    print(json.dumps({"event": "impute", "direction": direction, "seed": opts["seed"],
                      "max_abs_residual": float(np.abs(outcome.residuals).max(initial=0.0))}))
    write_manifest(opts["out"], "impute", opts,
                   [opts["recipient"], opts["donor"], opts["plan"]], [opts["out"]])
    return 0


def cmd_estimate(opts, extra):
    _no_extra(extra)
    _need(opts, "out")
    rep = representation_name(opts["representation"])
    if rep.startswith("imputed"):
        _need(opts, "seed")
    rec, don = load_frames(opts)
    plan = _plan_for(opts, rec, don)
    fused = fuse(plan, rec, don, rep, seed=opts.get("seed"))
    rows = []
    if opts["kind"] == "mean":
        for block, names in (("y", rec.extra_names), ("z", don.extra_names)):
            val = mean_estimate(fused, block).value[0]
            rows += [["mean", rep, block, n, fmt(v)] for n, v in zip(names, val)]
    else:
        est = contingency(fused) if opts["kind"] == "contingency" else covariance_yz(fused)
        for i, yn in enumerate(rec.extra_names):
            for j, zn in enumerate(don.extra_names):
                rows.append([est.kind, rep, yn, zn, fmt(est.value[i, j])])
    _write_rows(opts["out"], ["kind", "representation", "row", "col", "value"], rows)
    write_manifest(opts["out"], "estimate", opts,
                   [opts["recipient"], opts["donor"], opts["plan"]], [opts["out"]])
    return 0


def cmd_simulate(opts, extra, config_path=None):
    _need(opts, "out", "seed")
    known = {f.name for f in fields(GaussianSpec)}
    unknown = set(extra) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
    over = {k: opts.get(k) for k in ("replicates", "n1", "n2", "seed", "metric", "cost", "truth")}
    spec = GaussianSpec.from_mapping(extra, **over)
    report = run_monte_carlo(spec, n_jobs=opts["jobs"])
    report.write_csv(opts["out"])
    print(json.dumps({"event": "simulate", "replicates": report.replicates,
                      "failures": report.failures}))
    cfg = dict(opts)
    cfg["spec"] = {f.name: getattr(spec, f.name) for f in fields(spec)}
    write_manifest(opts["out"], "simulate-gaussian", cfg, [config_path], [opts["out"]])
    return 0


def cmd_verify(opts, extra):
    _no_extra(extra)
    _need(opts, "plan")
    rec, don = load_frames(opts)
    pair = _pair(opts, rec, don)
    cost = cost_matrix(pair, opts["metric"], opts["cost"])
    plan = load_plan(opts["plan"], rec.ids, don.ids, pair=pair, cost=cost)
    cert = verify_plan(plan, cost, pair)
    print(json.dumps({"event": "verify", **cert.summary()}))
    return 0 if cert.passed else 2


COMMANDS = {
    "harmonize": cmd_harmonize,
    "match": cmd_match,
    "predict": cmd_predict,
    "impute": cmd_impute,
    "estimate": cmd_estimate,
    "verify": cmd_verify,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        opts, extra = resolve(args)
        if args.command == "simulate-gaussian":
            return cmd_simulate(opts, extra, args.config)
        return COMMANDS[args.command](opts, extra)
    except StatfuseError as exc:
        _diagnostic(type(exc).__name__, str(exc), exc.exit_code)
        return exc.exit_code
    except OSError as exc:
        _diagnostic("OSError", str(exc), 1)
        return 1


def _show_warning(message, category, filename, lineno, file=None, line=None):
    # warnings follow the same one-line JSON convention as errors
    print(json.dumps({"warning": category.__name__, "message": str(message)}), file=sys.stderr)


def main(argv=None) -> int:
    with warnings.catch_warnings():
        warnings.showwarning = _show_warning
        try:
            return run(argv)
        except SystemExit as exc:
            return exc.code if isinstance(exc.code, int) else 1


if __name__ == "__main__":
    sys.exit(main())
