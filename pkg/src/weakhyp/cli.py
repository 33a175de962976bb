"""Command line front end (``weakhyp``)."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .pipeline import EXIT_CODES, Emitter, run_pipeline, threshold_table
from .scenarios import STAGES, ScenarioError, builtin, builtin_names, load_scenario

OUT_ENV = "WEAKHYP_OUT"


_DEFAULTS = {"out": None, "seed": None, "tol": None, "jobs": 1, "fmt": "csv"}


def _global_flags():
    # defaults are suppressed so a flag given before the subcommand survives
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--out", help=f"output root (default: ${OUT_ENV} or ./weakhyp-out)")
    p.add_argument("--seed", type=int, help="seed for sampled checks and data phases (u64)")
    p.add_argument("--tol", type=float, help="integrator relative tolerance")
    p.add_argument("--jobs", type=int, help="worker processes for solves")
    p.add_argument("--format", choices=("csv", "json"), dest="fmt")
    return p


def build_parser():
    g = _global_flags()
    ap = argparse.ArgumentParser(prog="weakhyp", parents=[g],
                                 description="Gevrey well-posedness diagnostics")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name, helptext in (("reduce", "block Sylvester reduction checks"),
                           ("eigen", "eigenvalues, uniformity and regularization"),
                           ("energy-scan", "energy quantities and scaling fits")):
        sp = sub.add_parser(name, parents=[g], help=helptext)
        sp.add_argument("scenario")
    sp = sub.add_parser("solve", parents=[g], help="per-frequency solves and W-monotonicity")
    sp.add_argument("scenario")
    sp.add_argument("--s", type=float, action="append", required=True, dest="s_values")
    sp.add_argument("--trajectory", action="store_true", help="also write trajectories")
    sp = sub.add_parser("gevrey-fit", parents=[g], help="Gevrey decay fit of V(T)")
    sp.add_argument("scenario")
    sp.add_argument("--s0", type=float, required=True)
    sp.add_argument("--delta0", type=float, required=True)
    sp = sub.add_parser("run", parents=[g], help="configured pipeline stages")
    sp.add_argument("scenario")
    sp.add_argument("--stages", nargs="+", choices=STAGES, default=None)
    sp = sub.add_parser("thresholds", parents=[g], help="Gevrey threshold comparison table")
    sp.add_argument("--alphas", type=float, nargs="+", required=True)
    sp.add_argument("--ms", type=int, nargs="+", required=True)
    sp = sub.add_parser("scenario", parents=[g], help="scenario catalog")
    sp.add_argument("action", choices=("list", "show"))
    sp.add_argument("name", nargs="?")
    return ap


def _out_root(args):
    return args.out or os.environ.get(OUT_ENV) or "weakhyp-out"


def _print_result(res):
    for st in res.stages:
        line = f"{st:12s} {res.status.get(st, 'skipped')}"
        if st in res.errors:
            line += f"  ({res.errors[st]})"
        print(line)
    print(f"outputs: {res.out_dir}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    for k, v in _DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    if args.cmd == "scenario":
        if args.action == "list":
            for n in builtin_names():
                print(n)
            return 0
        if not args.name:
            print("scenario show needs a name", file=sys.stderr)
            return EXIT_CODES["config"]
        try:
            print(json.dumps(builtin(args.name).to_dict(), indent=2, sort_keys=True))
        except ScenarioError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CODES["config"]
        return 0
    if args.cmd == "thresholds":
        rows = threshold_table(args.alphas, args.ms)
        cols = ["alpha", "m", "s_star", "s_yuzawa", "improvement"]
        em = Emitter(os.path.join(_out_root(args), "thresholds"), args.fmt)
        em.table("thresholds", cols, rows)
        em.flush({"command": "thresholds", "files": em.inventory()})
        sys.stdout.write(next(iter(em.files.values())).decode())
        return 0 if all(r[4] >= 0 for r in rows) else EXIT_CODES["config"]
    try:
        scn = load_scenario(args.scenario)
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES["config"]
    if args.seed is not None:
        from dataclasses import replace

        scn = replace(scn, data=replace(scn.data, seed=args.seed))
    if args.tol is not None and not 0 < args.tol < 1e-3:
        print("error: --tol must lie in (0, 1e-3)", file=sys.stderr)
        return EXIT_CODES["config"]
    kw = dict(out=_out_root(args), fmt=args.fmt, seed=args.seed or 0, rtol=args.tol,
              jobs=max(1, args.jobs))
    if args.cmd == "run":
        res = run_pipeline(scn, args.stages, **kw)
    elif args.cmd == "solve":
        res = run_pipeline(scn, ["solve"], s_values=args.s_values,
                           trajectory=args.trajectory, **kw)
    elif args.cmd == "gevrey-fit":
        if not args.s0 > 1 or not args.delta0 > 0:
            print("error: need --s0 > 1 and --delta0 > 0", file=sys.stderr)
            return EXIT_CODES["config"]
        res = run_pipeline(scn, ["gevrey-fit"], s0=args.s0, delta0=args.delta0, **kw)
    else:
        res = run_pipeline(scn, [args.cmd], **kw)
    _print_result(res)
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
