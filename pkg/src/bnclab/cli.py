"""``bnclab`` command line: instance generation, solving, probes, bounds, tuning and verification."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .bounds import BoundError, bound_table, load_inputs
from .engine import BncConfig, ProcessAborted, export_trace, solve_bnc
from .instance import (
    FAMILIES,
    InstanceError,
    enumerate_integer_optimum,
    generate_sample,
    parse_instance,
    serialize_instance,
)
from .lab import (
    REPORT_SCHEMA,
    ConfigError,
    ExperimentConfig,
    build_report,
    census_suites,
    emit_report,
    load_config,
    slice_suite,
    train_test,
    write_csv,
    jsonable,
)
from .policy import PolicyError, default_bundle, load_policy


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg.validate()
    return cfg


def _read_instance(path):
    with open(path, encoding="utf-8") as fh:
        return parse_instance(fh.read())


def cmd_gen(args) -> int:
    insts = generate_sample(args.family, args.n1, args.n2, args.m, tuple(args.coeff), args.seed, args.count)
    os.makedirs(args.out, exist_ok=True)
    for inst in insts:
        p = os.path.join(args.out, f"{inst.name}.mip")
        with open(p, "w", encoding="utf-8") as fh:
            fh.write(serialize_instance(inst))
        print(p)
    return 0


def cmd_solve(args) -> int:
    inst = _read_instance(args.instance)
    policy = load_policy(args.policy) if args.policy else default_bundle()
    cfg = BncConfig(M=args.M, eps_gap=args.eps_gap, R=args.R, kappa=args.kappa, r=args.r)
    try:
        res = solve_bnc(inst, policy, cfg)
    except ProcessAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        if args.trace:
            with open(args.trace, "w", encoding="utf-8") as fh:
                fh.write(export_trace(exc.trace, {"instance": inst.name, "aborted": True}))
        return 2
    print(f"instance  {inst.name}")
    print(f"status    {res.status} ({res.reason})")
    print(f"value     {res.value:.10g}")
    print(f"bounds    LB={res.lb:.10g} UB={res.ub:.10g}")
    print(f"V         {res.V:g}")
    print(f"Q         {json.dumps({str(k): v for k, v in res.trace.q_counts.items()})}")
    print(f"cuts      {len(res.cuts)} generated, {res.lp_solves} LP solves")
    if res.x is not None:
        print("x         " + " ".join(f"{v:g}" for v in res.x))
    if args.oracle:
        opt = enumerate_integer_optimum(inst)
        print(f"oracle    {opt.status} {opt.value:.10g}")
    if args.trace:
        meta = {"instance": inst.name, "M": cfg.M, "R": cfg.R, "kappa": cfg.kappa, "r": cfg.r}
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write(export_trace(res.trace, meta))
    return 0


def cmd_scan(args) -> int:
    cfg = _config(args)
    a = cfg.analysis
    analysis = type(a)(**{**a.__dict__, "slices_per_instance": args.slices or a.slices_per_instance,
                           "slice_instances": args.instances or a.slice_instances,
                           "scan_grid": args.grid or a.scan_grid,
                           "bisect_tol": args.tol or a.bisect_tol})
    cfg = ExperimentConfig(**{**cfg.__dict__, "analysis": analysis})
    train, _ = train_test(cfg)
    suite, scans = slice_suite(cfg, train)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for idx, (inst, sl, scan) in enumerate(scans):
        rows.extend([idx, inst, sl, t, v] for t, v in scan.rows())
    write_csv(os.path.join(args.out, "scans.csv"), "scans", ["scan", "instance", "slice", "t", "V"], rows)
    summary = {
        "schema": REPORT_SCHEMA,
        "config_hash": cfg.hash(),
        "suite": suite.status,
        "scans": [{"instance": i, "slice": s, "breakpoints": sc.breakpoints, "piece_values": sc.piece_values,
                   "violations": sc.violations, "jitter": sc.jitter} for i, s, sc in scans],
    }
    with open(os.path.join(args.out, "scan_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.figures:
        from .plots import plot_scans

        plot_scans(scans, args.out)
    for i, s, sc in scans:
        print(f"instance {i} slice {s}: {len(sc.breakpoints)} breakpoints, pieces {sc.piece_values}")
    print(f"slice-constancy: {suite.status}")
    return 0 if suite.passed else 1


def cmd_census(args) -> int:
    cfg = _config(args)
    a = cfg.analysis
    analysis = type(a)(**{**a.__dict__, "census_instances": args.instances or a.census_instances,
                           "census_samples": args.samples or a.census_samples,
                           "census_seed": a.census_seed if args.seed is None else args.seed})
    cfg = ExperimentConfig(**{**cfg.__dict__, "analysis": analysis})
    train, _ = train_test(cfg)
    suites, census = census_suites(cfg, train)
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "census.csv"), "census",
              ["vector"] + [f"V{i + 1}" for i in range(census.n_instances)],
              [[j, *v] for j, v in enumerate(census.vectors)])
    summary = {"schema": REPORT_SCHEMA, "config_hash": cfg.hash(), "count": census.count,
               "samples": census.sampler.count, "q_sums": census.q_sums,
               "suites": {s.name: {"status": s.status, **s.detail} for s in suites}}
    with open(os.path.join(args.out, "census_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.figures:
        from .plots import plot_census

        plot_census(census, args.out)
    print(f"distinct cost vectors: {census.count} over {census.sampler.count} samples")
    for s in suites:
        print(f"{s.name}: {s.status}")
    return 0 if all(s.passed is not False for s in suites) else 1


def cmd_bounds(args) -> int:
    inp = load_inputs(args.inputs)
    rows = bound_table(inp)
    width = max(len(r.name) for r in rows)
    for r in rows:
        if r.value is not None:
            shown = f"{r.value:.10g}"
        elif r.log_value is not None:
            shown = f"exp({r.log_value:.10g})"
        else:
            shown = r.note
        print(f"{r.name.ljust(width)}  {shown}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_csv(os.path.join(args.out, "bounds.csv"), "bounds", ["bound", "log_value", "value", "note"],
                  [[r.name, r.log_value, r.value, r.note] for r in rows])
    return 0


def _report(args, **what):
    cfg = _config(args)
    rep = build_report(cfg, **what)
    out = args.out or cfg.out_dir
    files = emit_report(rep, out, figures=args.figures)
    return rep, out, files


def cmd_erm(args) -> int:
    rep, out, files = _report(args, erm=True, gap=False, verify=False)
    e = rep.erm
    print(f"best w (sample {e.best_index}): " + " ".join(f"{v:.6g}" for v in e.best_w))
    print(f"train mean V: {e.train_mean:.6g}; aborted runs: {len(e.aborted)}")
    print(f"wrote {', '.join(files)} to {out}")
    return 0


def cmd_gap(args) -> int:
    rep, out, files = _report(args, erm=False, gap=True, verify=False)
    g = rep.gap
    print(f"sup gap {g.sup_gap:.6g} over {len(g.ws)} parameter vectors (N = {g.N})")
    print(f"pdim-based bound {g.bound_pdim:.6g}; Rademacher-based bound "
          f"{'n/a' if g.bound_rademacher is None else f'{g.bound_rademacher:.6g}'} (up to the suppressed constant)")
    print(f"wrote {', '.join(files)} to {out}")
    return 0 if g.dominated else 1


def cmd_verify(args) -> int:
    rep, out, files = _report(args, erm=not args.quick, gap=not args.no_gap, verify=True,
                              faults=tuple(args.fault or ()))
    for s in rep.verification.suites:
        print(f"{s.status:4}  {s.name}")
    print(f"wrote {', '.join(files)} to {out}")
    return 0 if rep.verification.ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bnclab", description=__doc__)
    p.add_argument("--version", action="version", version=f"bnclab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate random instances")
    g.add_argument("--family", choices=FAMILIES, default="packing")
    g.add_argument("--n1", type=int, default=10, help="integer variables")
    g.add_argument("--n2", type=int, default=0, help="continuous variables")
    g.add_argument("--m", type=int, default=4, help="constraint rows")
    g.add_argument("--coeff", type=int, nargs=2, default=(1, 9), metavar=("LO", "HI"))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--out", default="instances")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="one branch-and-cut run")
    s.add_argument("instance")
    s.add_argument("--policy", help="policy JSON (default: DFS / efficacy / product)")
    s.add_argument("--M", type=int, default=100, help="maximum rounds")
    s.add_argument("--R", type=int, default=1, help="root cut rounds")
    s.add_argument("--kappa", type=int, default=1, help="cuts picked per round")
    s.add_argument("--r", type=int, default=10, help="candidate cut cap")
    s.add_argument("--eps-gap", type=float, default=1e-6)
    s.add_argument("--trace", help="write the step trace (JSON lines) here")
    s.add_argument("--oracle", action="store_true", help="also print the enumeration optimum")
    s.set_defaults(func=cmd_solve)

    def with_config(q, out_default=None):
        q.add_argument("--config", help="experiment config JSON (default: built-in desk config)")
        q.add_argument("--out", default=out_default, help="output directory")
        q.add_argument("--figures", action="store_true", help="also render PNG figures")

    sc = sub.add_parser("scan", help="piecewise-constancy scans along parameter slices")
    with_config(sc, "scan")
    sc.add_argument("--instances", type=int, help="training instances to scan")
    sc.add_argument("--slices", type=int, help="slices per instance")
    sc.add_argument("--grid", type=int, help="initial grid size")
    sc.add_argument("--tol", type=float, help="bisection tolerance in t")
    sc.set_defaults(func=cmd_scan)

    c = sub.add_parser("census", help="distinct cost vectors over a parameter sample")
    with_config(c, "census")
    c.add_argument("--instances", type=int)
    c.add_argument("--samples", type=int)
    c.add_argument("--seed", type=int)
    c.set_defaults(func=cmd_census)

    b = sub.add_parser("bounds", help="evaluate every bound for a bounds input file")
    b.add_argument("inputs", help="bounds input JSON")
    b.add_argument("--out", help="also write bounds.csv here")
    b.set_defaults(func=cmd_bounds)

    e = sub.add_parser("erm", help="random-search parameter tuning on the training sample")
    with_config(e)
    e.set_defaults(func=cmd_erm)

    gp = sub.add_parser("gap", help="train/held-out gaps against uniform-convergence bounds")
    with_config(gp)
    gp.set_defaults(func=cmd_gap)

    v = sub.add_parser("verify", help="run every verification suite and write a report")
    with_config(v)
    v.add_argument("--fault", action="append", choices=["corrupt-cut"], help="plant a fault")
    v.add_argument("--no-gap", action="store_true", help="skip the generalization-gap suite")
    v.add_argument("--quick", action="store_true", help="skip ERM tuning")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InstanceError, PolicyError, BoundError, OSError) as exc:
        print(f"bnclab {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
