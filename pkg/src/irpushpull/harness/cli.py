"""Command-line entry point (``irpp``)."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..digraph import AssumptionError
from ..engine import DivergenceError, InvariantError, ScheduleError
from ..oracle import OracleCache, OracleError, bilevel_solution, tikhonov_point
from .config import ConfigError, build_problem, load_config
from .presets import PRESET_NAMES, preset
from .runner import ValidationFailure, problem_spec, run_experiment, summarize, validate_config, write_results

RUN_ERRORS = (ConfigError, ValidationFailure, DivergenceError, InvariantError, ScheduleError, AssumptionError,
              OracleError)


def _add_source(sp, required=True):
    g = sp.add_mutually_exclusive_group(required=required)
    g.add_argument("--config", type=Path, help="JSON experiment config")
    g.add_argument("--preset", choices=PRESET_NAMES, help="built-in experiment")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="irpp", description="Iteratively regularized push-pull simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("run", help="run an experiment and write one CSV per graph")
    _add_source(sp)
    sp.add_argument("--out", type=Path, help="output directory (default: config 'output' or ./results)")
    sp.add_argument("--iterations", "-K", type=int, dest="K", help="override the iteration count")
    sp.add_argument("--cache", type=Path, help="JSON sidecar for oracle results")

    sp = sub.add_parser("validate", help="check the mixing-matrix assumptions of every graph")
    _add_source(sp)

    sp = sub.add_parser("oracle", help="print a centralized reference point as JSON")
    _add_source(sp)
    sp.add_argument("--lambda", type=float, dest="lam", required=True,
                    help="regularization value; 0 gives the bilevel solution")
    sp.add_argument("--tol", type=float, default=None)

    sp = sub.add_parser("compare", help="IR push-pull against fixed-regularization push-pull")
    _add_source(sp)
    sp.add_argument("--out", type=Path)
    sp.add_argument("--iterations", "-K", type=int, dest="K")
    sp.add_argument("--cache", type=Path)
    return ap


def _load(args):
    if args.config is not None:
        return load_config(args.config), args.config.parent
    return preset(args.preset), Path(".")


def _cmd_run(args, modes, suffix):
    cfg, base = _load(args)
    cache = OracleCache(args.cache) if args.cache else None
    exp = run_experiment(cfg, base_dir=base, cache=cache, modes=modes, K=args.K)
    out = args.out or Path(cfg.output or "results")
    for path in write_results(cfg, exp.runs, out, suffix_modes=suffix):
        print(f"wrote {path}")
    print(summarize(exp.runs, exp.problem))
    if cache is not None:
        cache.save()
    return 0


def _cmd_validate(args):
    cfg, _ = _load(args)
    ok = True
    for gs, report in validate_config(cfg):
        print(f"[{gs.tag}]")
        for line in report.lines():
            print(f"  {line}")
        ok &= report.ok
    return 0 if ok else 1


def _cmd_oracle(args):
    cfg, base = _load(args)
    p = build_problem(problem_spec(cfg), base)
    if args.lam < 0:
        raise ConfigError("--lambda must be nonnegative")
    if args.lam == 0:
        sol = bilevel_solution(p, **({} if args.tol is None else {"tol": args.tol}))
    else:
        sol = tikhonov_point(p, args.lam, **({} if args.tol is None else {"tol": args.tol}))
    print(json.dumps({"lambda": sol.lam, "method": sol.method, "residual": sol.residual,
                      "f": p.f(sol.x), "g": p.g(sol.x), "x": sol.x.tolist()}, indent=1))
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args, ("ir",), suffix=False)
        if args.command == "compare":
            return _cmd_run(args, ("ir", "pushpull"), suffix=True)
        if args.command == "validate":
            return _cmd_validate(args)
        return _cmd_oracle(args)
    except RUN_ERRORS as exc:
        print(f"irpp {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
