"""Command line entry point: ``commslide {run,validate,rates,replay}``."""
from __future__ import annotations

import argparse
import glob
import json
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..schedule import ScheduleError, inner_report, validate_outer
from ..topology import laplacian, spectral_constants
from . import experiment as ex
from .rates import fit_rate

METRICS = {
    "primal": lambda s: s["measured"]["primal_gap_abs"],
    "feasibility": lambda s: s["measured"]["feasibility"],
    "consensus": lambda s: s["measured"]["consensus_primal_gap"],
}


def _config(args) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    if getattr(args, "assert_bounds", None) is not None:
        cfg.assert_bounds = args.assert_bounds == "on"
    return cfg


def cmd_run(args) -> int:
    cfg = _config(args)
    code, summaries = ex.run_experiment(cfg)
    for s in summaries:
        line = f"N={s['N']:<5d} seed={s['seed']:<4d} {s['status']}"
        if s["status"] == "ok":
            b = s["bounds"]
            line += (f"  primal {b['primal']['measured']:.4g} <= {b['primal']['rhs']:.4g}"
                     f"  feas {b['feasibility']['measured']:.4g} <= {b['feasibility']['rhs']:.4g}"
                     f"  rounds {s['comm_rounds']}")
        else:
            failed = [c["name"] for c in s["validation"]["outer"]["conditions"] if not c["passed"]]
            failed += [r["name"] for r in s["validation"]["inner"] if not r["passed"]]
            line += f"  failed: {', '.join(failed)}"
        print(line)
    print(f"results in {cfg.out} (exit {code})")
    return code


def cmd_validate(args) -> int:
    cfg = _config(args)
    problem = ex._problem(cfg)
    spec = spectral_constants(laplacian(ex._graph(cfg.graph), problem.d))
    code = 0
    for N in cfg.N:
        try:
            outer, inner, _ = ex.build_schedules(cfg, problem, spec.op_norm, N)
        except ScheduleError as err:
            print(json.dumps({"N": N, "error": str(err)}))
            code = 2
            continue
        rep = validate_outer(outer, spec.op_norm, problem.mu, problem.C)
        out = {"N": N, "T": int(outer.T[0]), **rep.to_dict()}
        if inner is not None:
            bad = [k + 1 for k in range(N)
                   if not inner_report(inner, float(outer.eta[k]), problem.mu, problem.C,
                                       int(outer.T[k])).passed]
            out["inner_failed_k"] = bad
            if bad:
                code = 2
        if not rep.passed:
            code = 2
        print(json.dumps(out))
    return code


def cmd_rates(args) -> int:
    paths = sorted(glob.glob(args.glob, recursive=True))
    if not paths:
        print(f"no summaries match {args.glob!r}", file=sys.stderr)
        return 2
    groups = defaultdict(lambda: defaultdict(list))
    for p in paths:
        s = json.loads(Path(p).read_text())
        if s.get("status") != "ok":
            continue
        groups[(s["mode"], s["problem"])][s["N"]].append(METRICS[args.metric](s))
    code = 0
    for (mode, prob), by_n in sorted(groups.items()):
        pairs = [(n, float(np.mean(v))) for n, v in sorted(by_n.items())]
        try:
            fit = fit_rate(pairs)
            print(json.dumps({"mode": mode, "problem": prob, "metric": args.metric,
                              "slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2,
                              "pairs": pairs}))
        except ValueError as err:
            print(json.dumps({"mode": mode, "problem": prob, "error": str(err), "pairs": pairs}))
            code = 2
    return code


def cmd_replay(args) -> int:
    cell = ex.replay(args.manifest, args.out)
    original = Path(args.manifest).parent / "trace.csv"
    same = (cell / "trace.csv").read_bytes() == original.read_bytes()
    print(f"replayed into {cell}: trace {'identical' if same else 'DIFFERS'}")
    return 0 if same else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="commslide", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="TOML or JSON experiment config")
        sp.add_argument("--seed", type=int, help="run a single seed instead of the config list")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--assert-bounds", choices=("on", "off"), dest="assert_bounds")

    sp = sub.add_parser("run", help="run every (N, seed) cell of a config")
    common(sp)
    sp.set_defaults(func=cmd_run)
    sp = sub.add_parser("validate", help="build and check schedules without running")
    common(sp)
    sp.set_defaults(func=cmd_validate)
    sp = sub.add_parser("rates", help="fit log-log slopes across run summaries")
    sp.add_argument("--glob", required=True, help="pattern for summary.json files")
    sp.add_argument("--metric", choices=sorted(METRICS), default="primal")
    sp.set_defaults(func=cmd_rates)
    sp = sub.add_parser("replay", help="re-run a cell from its manifest and compare traces")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
