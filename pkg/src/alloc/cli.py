"""Command-line entry point: ``alloc run | compare | fpdiag | validate``.

Exit codes: 0 success, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import kernels
from .config import load_plan, parse_overrides
from .harness import SCHEMA_VERSION, compare, dump_json, fixed_point_diagnostics, run_experiment
from .market import ConfigError

log = logging.getLogger("alloc")

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3


def _plan(args, path, out_dir=None):
    over = parse_overrides(args.set)
    if args.seed is not None:
        over["seed"] = str(args.seed)
    if args.trials is not None:
        over["trials"] = str(args.trials)
    if getattr(args, "emit_plot_data", False):
        over["emit_plot_data"] = "true"
    if getattr(args, "no_trace", False):
        over["write_trace"] = "false"
    return load_plan(path, over, out_dir)


def _print_aggregates(name, summary):
    agg = summary.aggregates
    parts = [f"{k}={agg[k]['mean']:.6g}" for k in ("welfare", "regret", "violation", "mean_abs_misreport")
             if agg[k]["mean"] is not None]
    print(f"{name}: " + " ".join(parts))


def cmd_run(args) -> int:
    plan = _plan(args, args.config, args.out)
    for msg in plan.market.lint():
        log.warning(msg)
    summary = run_experiment(plan)
    _print_aggregates(plan.mechanism.name, summary)
    return EXIT_OK


def cmd_compare(args) -> int:
    plans = [_plan(args, path) for path in args.configs]
    results = compare(plans, args.out)
    for name, summary in results.items():
        _print_aggregates(name, summary)
    return EXIT_OK


def cmd_fpdiag(args) -> int:
    plan = _plan(args, args.config)
    rows = fixed_point_diagnostics(plan)
    d = plan.market.d
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "fpdiag.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial", "epoch", "eta"]
                       + [f"{m}_{j}" for m in ("lambda_exact", "lambda_approx", "lambda_ftrl") for j in range(d)]
                       + ["residual_exact", "residual_approx", "rel_diff_exact_approx", "absolute_flag",
                          "rel_diff_exact_ftrl", "grad_norm"])
            for r in rows:
                w.writerow([r["trial"], r["epoch"], repr(r["eta"])]
                           + [repr(x) for m in ("lambda_exact", "lambda_approx", "lambda_ftrl") for x in r[m]]
                           + [repr(r["residual_exact"]), repr(r["residual_approx"]),
                              repr(r["rel_diff_exact_approx"]), int(r["absolute_flag"]),
                              repr(r["rel_diff_exact_ftrl"]), repr(r["grad_norm"])])
        dump_json({"schema_version": SCHEMA_VERSION, "kind": "fixed_point_diagnostics",
                   "config": plan.echo(), "rows": rows}, out / "fpdiag.json")
    worst = max((r["rel_diff_exact_approx"] for r in rows if r["epoch"] >= 4), default=0.0)
    print(f"epochs={len(rows)} max_rel_diff_exact_approx(epoch>=4)={worst:.6g}")
    return EXIT_OK


def cmd_validate(args) -> int:
    ok = True
    for path in args.configs:
        plan = _plan(args, path)
        lint = plan.market.lint()
        for msg in lint:
            print(f"{path}: warning: {msg}")
        if args.echo:
            print(json.dumps(plan.echo(), indent=1, sort_keys=True))
        print(f"{path}: ok")
        ok = ok and not (lint and args.strict)
    return EXIT_OK if ok else EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="alloc", description="Repeated constrained allocation experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--trials", type=int, help="number of trials (overrides the config)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")

    r = sub.add_parser("run", help="run one experiment plan")
    r.add_argument("--config", required=False)
    r.add_argument("--out", required=True)
    r.add_argument("--emit-plot-data", action="store_true", help="also write long-format plot_data.csv")
    r.add_argument("--no-trace", action="store_true", help="skip the per-round trace.csv")
    common(r)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="run several mechanisms on shared market streams")
    c.add_argument("--configs", nargs="+", required=True)
    c.add_argument("--out")
    c.add_argument("--emit-plot-data", action="store_true")
    c.add_argument("--no-trace", action="store_true")
    common(c)
    c.set_defaults(func=cmd_compare)

    f = sub.add_parser("fpdiag", help="fixed-point diagnostics for the optimistic updater")
    f.add_argument("--config")
    f.add_argument("--out")
    common(f)
    f.set_defaults(func=cmd_fpdiag)

    v = sub.add_parser("validate", help="parse and lint config files")
    v.add_argument("configs", nargs="+")
    v.add_argument("--echo", action="store_true", help="print the resolved plan")
    v.add_argument("--strict", action="store_true", help="treat lint warnings as errors")
    common(v)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.debug("kernel backend: %s", kernels.BACKEND)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
