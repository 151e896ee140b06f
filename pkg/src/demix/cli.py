"""Command-line interface: ``demix {solve,phase,check,version}``.

Exit codes: 0 success, 1 configuration error, 2 solver divergence,
3 self-check failure.
"""
import argparse
import os
import sys

import numpy as np

from . import __version__
from .bench import (make_instance, minimal_success_n, median_error, run_experiment,
                    solve_instance, success_probability, emit_csv)
from .checks import reversed_tiebreak_project, run_checks
from .config import dump_spec, load_config
from .errors import ConfigError, DivergedError
from .plot import emit_svg

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CHECK = 0, 1, 2, 3


def _threads(arg):
    if arg is None:
        env = os.environ.get("DEMIX_THREADS")
        arg = int(env) if env else 1
    if arg == 0:
        arg = os.cpu_count() or 1
    return max(1, arg)


def _out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def cmd_solve(args):
    spec, run = load_config(args.config, args.override)
    n = run.get("n", spec.sample_grid[-1])
    solver = run.get("solver", spec.solvers[0])
    if solver not in spec.solvers and solver not in ("struct-dht", "dht", "dst"):
        raise ConfigError("solver", "unknown solver %r" % solver)
    instance = make_instance(spec, n, run.get("trial", 0))
    out = _out_dir(args.out)
    with open(os.path.join(out, "instance.txt"), "w") as fh:
        for name, comp in (("theta1", instance.theta1), ("theta2", instance.theta2)):
            rec = comp.pattern.to_record()
            fh.write("%s.b = %d\n%s.s = %d\n%s.blocks = %s\n"
                     % (name, rec["b"], name, rec["s"], name, rec["blocks"]))
    try:
        res = solve_instance(spec, instance, solver, record_trace=True)
    except DivergedError as exc:
        print("solver=%s n=%d diverged at iteration %d: %s" % (solver, n, exc.iteration, exc))
        return EXIT_DIVERGED
    res.trace.to_csv(os.path.join(out, "trace.csv"))
    err = np.linalg.norm(res.beta_hat - instance.beta) / np.linalg.norm(instance.beta)
    print("solver=%s n=%d norm_error=%.6e iterations=%d converged=%s"
          % (solver, n, err, res.iterations_used, res.converged))
    return EXIT_OK


def cmd_phase(args):
    spec, run = load_config(args.config, args.override)
    out = _out_dir(args.out)
    results = run_experiment(spec, threads=_threads(args.threads))
    emit_csv(results, os.path.join(out, "results.csv"), timing=run.get("record_timing", False))
    emit_svg(results, os.path.join(out, "success.svg"), "success", spec.success_threshold)
    emit_svg(results, os.path.join(out, "error.svg"), "error")
    with open(os.path.join(out, "metadata.txt"), "w") as fh:
        fh.write("# block values: standard normal, each component scaled to unit norm\n")
        fh.write("# dst_lambda auto: 0.1*||grad F(0)||_inf, /10 every max_iters/5 iterations\n")
        fh.write(dump_spec(spec, run))
    for solver in spec.solvers:
        for n in spec.sample_grid:
            print("%-10s n=%-6d success=%.2f median_error=%.3e" % (
                solver, n, success_probability(results, solver, n, spec.success_threshold),
                median_error(results, solver, n)))
        print("%-10s minimal n with success >= 0.9: %s"
              % (solver, minimal_success_n(results, solver, 0.9, spec.success_threshold)))
    return EXIT_OK


def cmd_check(args):
    projector = reversed_tiebreak_project if args.inject_fault == "tie-break" else None
    results = run_checks(projector)
    width = max(len(r.name) for r in results)
    for r in results:
        print("%-4s  %-12s %-*s  %s" % ("PASS" if r.passed else "FAIL", r.family, width,
                                        r.name, r.detail))
    families = sorted({r.family for r in results})
    failed = sum(not r.passed for r in results)
    print("%d checks in %d families, %d failed" % (len(results), len(families), failed))
    return EXIT_OK if failed == 0 else EXIT_CHECK


def build_parser():
    parser = argparse.ArgumentParser(prog="demix", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "solve one synthetic instance"),
                        ("phase", "run a phase-transition experiment")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="key = value config file")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads, 0 = all cores (default: $DEMIX_THREADS or 1)")
    p = sub.add_parser("check", help="run the invariant self-checks")
    p.add_argument("--inject-fault", choices=["tie-break"], default=None,
                   help=argparse.SUPPRESS)
    sub.add_parser("version", help="print the version")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            return cmd_solve(args)
        if args.command == "phase":
            return cmd_phase(args)
        if args.command == "check":
            return cmd_check(args)
        print("demix %s" % __version__)
        return EXIT_OK
    except ConfigError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
