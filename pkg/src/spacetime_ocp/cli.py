"""Command line entry point: ``spacetime-ocp {solve,convergence,trajectory}``."""
import argparse
import contextlib
import json
import logging
import os
import sys

import numpy as np

from . import experiments as ex
from . import spatial, temporal

log = logging.getLogger("spacetime_ocp")

NONE = "none"


def _bound(text):
    text = text.strip()
    return NONE if text.lower() == NONE else float(text)


def _rho(text):
    text = text.strip()
    if text == "auto":
        return "auto"
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"rho must be >= 0, got {text}")
    return value


def _floats(text):
    return tuple(float(p) for p in text.split(","))


def _ints(text):
    return [int(p) for p in text.split(",")]


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _choice(*allowed):
    def convert(text):
        if text not in allowed:
            raise argparse.ArgumentTypeError(
                f"expected one of {', '.join(map(str, allowed))}, got {text!r}")
        return text
    return convert


# flag / config-file key -> (RunConfig field, converter)
OPTIONS = {
    "dim": ("dim", int),
    "n": ("nx", int),
    "nx": ("nx", int),
    "nt": ("nt", int),
    "rho": ("rho", _rho),
    "lower": ("lower", _bound),
    "upper": ("upper", _bound),
    "target": ("target", _choice(*sorted(ex.TARGETS))),
    "omega": ("omega", float),
    "c": ("c", float),
    "newton-tol": ("newton_tol", float),
    "cg-tol": ("cg_tol", float),
    "max-newton": ("max_newton", int),
    "point": ("point", _floats),
    "threads": ("threads", _positive_int),
    "out": ("out", str),
    "ht-rule": ("ht_rule", _choice("hx", "hx2")),
    "levels": ("levels", _ints),
}

HELP = {
    "n": "cells per axis; n_t follows --ht-rule (default n_t = n)",
    "rho": "'auto' (h_x^2) or a value >= 0",
    "lower": "lower bound, or 'none'",
    "upper": "upper bound, or 'none'",
    "point": "trajectory point x[,y[,z]]",
    "levels": "comma separated refinement levels for 'convergence'",
    "ht-rule": "n_t = n_x (hx) or n_t = n_x^2 (hx2)",
}


def read_config_file(path):
    """``key = value`` lines with the flag names as keys; '#' starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("_", "-")
            if key not in OPTIONS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = OPTIONS[key][1](value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def _add_run_options(p):
    p.add_argument("--config", help="key = value file; command-line flags win")
    for key, (_, conv) in OPTIONS.items():
        p.add_argument(f"--{key}", type=conv, help=HELP.get(key))
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spacetime-ocp",
        description="Space-time FEM solver for state-constrained parabolic "
                    "optimal control")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_options(sub.add_parser("solve", help="single run at one resolution"))
    _add_run_options(sub.add_parser("convergence", help="refinement sweep"))
    tr = sub.add_parser("trajectory", help="sample a saved solution in time")
    tr.add_argument("solution", help="solution.npz written by 'solve'")
    tr.add_argument("--point", type=_floats, required=True)
    tr.add_argument("--output", help="CSV path (default: next to the solution)")
    return parser


def config_from_values(values):
    kwargs = {}
    for key, value in values.items():
        kwargs[OPTIONS[key][0]] = None if value == NONE else value
    return ex.RunConfig(**kwargs)


def parse_config(argv=None, config_file=None):
    """RunConfig from flags and an optional config file (flags win).

    Raises SystemExit with status 2 on malformed input.
    """
    parser = argparse.ArgumentParser(prog="spacetime-ocp", add_help=False)
    _add_run_options(parser)
    return _merge(parser, parser.parse_args(list(argv or [])), config_file)


def _merge(parser, args, config_file=None):
    values = {}
    path = config_file or getattr(args, "config", None)
    if path:
        try:
            values.update(read_config_file(path))
        except (OSError, ValueError) as exc:
            parser.error(str(exc))
    for key in OPTIONS:
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            values[key] = flag
    try:
        return config_from_values(values)
    except (TypeError, ValueError) as exc:
        parser.error(str(exc))


def _setup_logging(out_dir, verbose):
    os.makedirs(out_dir, exist_ok=True)
    log.setLevel(logging.DEBUG)
    for h in list(log.handlers):
        log.removeHandler(h)
        h.close()
    fh = logging.FileHandler(os.path.join(out_dir, "run.log"), mode="w")
    sh = logging.StreamHandler()
    # the file keeps the per-iteration history, the console only with -v
    fh.setLevel(logging.DEBUG)
    sh.setLevel(logging.DEBUG if verbose else logging.INFO)
    for h in (fh, sh):
        h.setFormatter(logging.Formatter("%(message)s"))
        log.addHandler(h)
    log.info("# TotalCG counts every inner CG iteration of every Newton step, "
             "damped and final undamped alike")


@contextlib.contextmanager
def _thread_limit(threads):
    if threads is None:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=threads):
        yield


def _cmd_solve(config):
    log.info("# config %s", json.dumps(ex.config_dict(config)))
    if config.constrained:
        problem, result = ex.run_constrained_level(config)
        for k, h in enumerate(result.history, 1):
            log.debug("it=%d active=-%d/+%d inactive=%d cg=%d incr=%.3e%s", k,
                     h.lower_active, h.upper_active, h.inactive, h.cg_iterations,
                     h.increment, "" if h.damped else " (undamped)")
        log.info("converged=%s newton=%d total_cg=%d |F2|=%.3e", result.converged,
                 result.iterations, result.total_cg,
                 ex.complementarity_report(problem, result, config))
        u, lam = result.u, result.lam
        rec = ex.ConvergenceRecord(config.nx, problem.op.size, result.iterations,
                                   result.total_cg)
        ex.write_convergence(os.path.join(config.out, "convergence_hist.csv"), [rec])
        ok = result.converged
    else:
        problem = ex.setup_problem(config)
        u, report = ex.solve_unconstrained(config, problem)
        lam = np.zeros_like(u)
        log.info("cg iterations=%d rel. residual=%.3e converged=%s",
                 report.iterations, report.relative_residual, report.converged)
        ok = report.converged
    bounds = (config.lower, config.upper) if config.constrained else None
    err = ex.l2q_error(problem.op, u, problem.target, bounds, config.error_order)
    log.info("L2(Q) error to projected target: %.6e", err)
    np.savez(os.path.join(config.out, "solution.npz"), u=u, lam=lam,
             config=json.dumps(ex.config_dict(config)))
    traj = ex.extract_trajectory(problem.op.tmesh, problem.op.smesh, u, config.point)
    ex.write_trajectory(os.path.join(config.out, ex.trajectory_filename(config.dim, 0)),
                        traj)
    return 0 if ok else 1


def _cmd_convergence(config):
    log.info("# config %s", json.dumps(ex.config_dict(config)))
    if config.constrained:
        records, _, results = ex.run_constrained_experiment(config)
        for rec in records:
            log.info("%s", ",".join(str(v) for v in rec.row()))
        ok = len(records) == len(config.levels) and all(r.converged for _, r in results)
        return 0 if ok else 1
    rows = ex.run_unconstrained_convergence(config)
    ex.write_error_table(os.path.join(config.out, "convergence_errors.csv"), rows)
    return 0


def _cmd_trajectory(parser, args):
    try:
        data = np.load(args.solution)
        fields = json.loads(str(data["config"]))
        fields["point"] = tuple(args.point)
        config = ex.RunConfig(**fields)
        traj = ex.extract_trajectory(
            temporal.TemporalMesh(config.T, config.n_t()),
            spatial.build_structured_mesh(config.dim, config.nx),
            data["u"], config.point)
    except (OSError, KeyError, ValueError) as exc:
        parser.error(str(exc))
    out = args.output or os.path.join(os.path.dirname(args.solution) or ".",
                                      ex.trajectory_filename(config.dim, 0))
    ex.write_trajectory(out, traj)
    print(out)
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "trajectory":
        return _cmd_trajectory(parser, args)
    config = _merge(parser, args)
    _setup_logging(config.out, args.verbose)
    with _thread_limit(config.threads):
        if args.command == "solve":
            return _cmd_solve(config)
        return _cmd_convergence(config)


if __name__ == "__main__":
    sys.exit(main())
