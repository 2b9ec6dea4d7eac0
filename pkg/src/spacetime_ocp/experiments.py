"""Experiment drivers: targets, error measurement, trajectories and CSV output."""
import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import spatial, temporal
from .krylov import build_mass_diag_preconditioner, pcg_solve
from .newton import BoxConstraints, NewtonConfig, newton_solve, semismooth_residual
from .operator import (apply_operator, assemble_load_vector, build_operator,
                       temporal_gauss)

log = logging.getLogger(__name__)

CONVERGENCE_HEADER = ["n", "dof", "NewtonIterations", "TotalCG", "relCG"]


def _sine_product(x, t):
    x = np.atleast_2d(x)
    return np.prod(np.sin(np.pi * x), axis=1) * np.sin(np.pi * t)


def _constant_one(x, t):
    return np.ones(np.atleast_2d(x).shape[0])


def _zero(x, t):
    return np.zeros(np.atleast_2d(x).shape[0])


TARGETS = {
    "sine": _sine_product,
    "one": _constant_one,
    "zero": _zero,
}


def builtin_target(name):
    try:
        return TARGETS[name]
    except KeyError:
        raise KeyError(f"unknown target {name!r}; known: {', '.join(sorted(TARGETS))}") from None


@dataclass
class RunConfig:
    dim: int = 3
    nx: int = 8
    nt: int = None
    ht_rule: str = "hx"
    rho: object = "auto"          # "auto" -> h_x^2, else a float >= 0
    lower: float = 0.0
    upper: float = 0.8
    target: str = "sine"
    omega: float = 0.1
    c: float = 1.0
    newton_tol: float = 1e-3
    cg_tol: float = 1e-10
    max_newton: int = 200
    levels: list = field(default_factory=lambda: [2, 4, 8, 16])
    point: tuple = (0.51, 0.51, 0.51)
    load_order: int = 3
    load_spatial_order: int = 2
    error_order: int = 5
    T: float = 1.0
    threads: int = None
    out: str = "results"
    fast: bool = True

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.ht_rule not in ("hx", "hx2"):
            raise ValueError("ht_rule must be 'hx' or 'hx2'")
        if self.rho != "auto":
            self.rho = float(self.rho)
            if not self.rho >= 0:
                raise ValueError(f"rho must be >= 0, got {self.rho}")
        if (self.lower is None) != (self.upper is None):
            raise ValueError("give both bounds or neither")
        if self.lower is not None and not self.lower <= 0 <= self.upper:
            raise ValueError("bounds must satisfy lower <= 0 <= upper")
        if self.lower is not None and not self.lower < self.upper:
            raise ValueError("lower bound must be below upper bound")
        if self.target not in TARGETS:
            raise ValueError(f"unknown target {self.target!r}")
        if len(self.point) != self.dim:
            self.point = tuple(self.point[:1]) * self.dim if len(self.point) == 1 \
                else tuple(self.point[:self.dim])
        if len(self.point) != self.dim:
            raise ValueError(f"point needs {self.dim} coordinates")
        if not all(0 < p < 1 for p in self.point):
            raise ValueError("point must lie inside the unit cube")
        if self.nx < 2:
            raise ValueError("nx must be >= 2")

    @property
    def constrained(self):
        return self.lower is not None

    def n_t(self):
        if self.nt is not None:
            return self.nt
        return self.nx if self.ht_rule == "hx" else self.nx * self.nx

    def rho_value(self):
        h = 1.0 / self.nx
        return h * h if self.rho == "auto" else self.rho

    def newton(self):
        return NewtonConfig(c=self.c, omega=self.omega,
                            increment_tol=self.newton_tol,
                            cg_rel_tol=self.cg_tol, max_newton=self.max_newton)

    def at_level(self, n):
        return replace(self, nx=n, nt=None)


@dataclass
class ConvergenceRecord:
    n: int
    dof: int
    newton_iterations: int
    total_cg: int

    @property
    def rel_cg(self):
        return self.total_cg / self.newton_iterations if self.newton_iterations else 0.0

    def row(self):
        return [self.n, self.dof, self.newton_iterations, self.total_cg,
                f"{self.rel_cg:.1f}"]


@dataclass
class Problem:
    config: RunConfig
    op: object
    f: np.ndarray
    target: object


def setup_problem(config):
    tmesh = temporal.TemporalMesh(config.T, config.n_t())
    smesh = spatial.build_structured_mesh(config.dim, config.nx)
    op = build_operator(tmesh, smesh, config.rho_value(), fast=config.fast,
                        workers=config.threads)
    target = builtin_target(config.target)
    f = assemble_load_vector(op, target, config.load_order,
                             config.load_spatial_order)
    return Problem(config, op, f, target)


def solve_unconstrained(config, problem=None):
    """PCG solve of K_h u = f with the space-time mass diagonal as preconditioner."""
    problem = problem or setup_problem(config)
    op = problem.op
    precond = build_mass_diag_preconditioner(op.M_t, op.M_x)
    return pcg_solve(lambda v: apply_operator(op, v), problem.f, precond,
                     config.cg_tol)


def _clamp(values, bounds):
    if bounds is None:
        return values
    return np.clip(values, bounds[0], bounds[1])


def l2q_error(op, u, target, bounds=None, quad_order=5):
    """||u_h - P_K target||_{L^2(Q)} by space-time product quadrature.

    ``bounds`` is a (lower, upper) pair of constants or None.
    """
    if quad_order not in (1, 2, 3, 4, 5):
        raise ValueError(f"unsupported quadrature order {quad_order}")
    t, wt, Phi = temporal_gauss(op.tmesh, quad_order)
    pts, wx, verts, lam = spatial.quadrature_points(op.smesh, quad_order)
    Psi = spatial.quadrature_basis_matrix(op.smesh, verts, lam)
    U = op.slices(u)
    PhiT = Phi.T.tocsr()
    total = 0.0
    for q in range(t.size):
        uq = Psi @ (PhiT[q] @ U).ravel()
        ref = _clamp(np.asarray(target(pts, t[q]), dtype=float), bounds)
        total += wt[q] * np.dot(wx, (uq - ref) ** 2)
    return math.sqrt(total)


def extract_trajectory(tmesh, smesh, u, point):
    """(t_j, u_h(point, t_j)) for all temporal nodes, starting at (0, 0)."""
    point = np.asarray(point, dtype=float)
    if point.shape != (smesh.d,) or np.any(point <= 0) or np.any(point >= 1):
        raise ValueError("trajectory point must lie inside the domain")
    U = np.asarray(u, dtype=float).reshape(tmesh.N_t, smesh.n_dofs)
    row = spatial.interpolation_matrix(smesh, point[None, :])
    values = np.concatenate([[0.0], U @ row.toarray().ravel()])
    return np.column_stack([tmesh.nodes, values])


def write_trajectory(path, trajectory):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "u"])
        for t, v in trajectory:
            w.writerow([repr(float(t)), repr(float(v))])


def write_convergence(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CONVERGENCE_HEADER)
        for rec in records:
            w.writerow(rec.row())


def trajectory_filename(dim, level):
    return f"trajectory_constrained_{dim}d_refinement_{level}.csv"


def complementarity_report(problem, result, config):
    bounds = BoxConstraints.constant(problem.op.size, config.lower, config.upper)
    _, F2 = semismooth_residual(result.u, result.lam, problem.f, problem.op,
                                bounds, config.c)
    return float(np.abs(F2).max())


def run_constrained_level(config):
    """Set up and solve one constrained level; returns (problem, result)."""
    problem = setup_problem(config)
    bounds = BoxConstraints.constant(problem.op.size, config.lower, config.upper)
    result = newton_solve(problem.op, problem.f, bounds, config.newton())
    return problem, result


def run_constrained_experiment(config, levels=None, write=True):
    """Level sweep with n_x = n_t = n and rho = h_x^2 unless overridden.

    Returns (records, trajectories, per-level results).
    """
    if not config.constrained:
        raise ValueError("constrained experiment needs bounds")
    levels = list(levels or config.levels)
    if write:
        os.makedirs(config.out, exist_ok=True)
    records, trajectories, results = [], [], []
    for idx, n in enumerate(levels):
        cfg = config.at_level(n)
        try:
            problem, result = run_constrained_level(cfg)
        except Exception:
            log.exception("level n=%d failed", n)
            continue
        rec = ConvergenceRecord(n, problem.op.size, result.iterations,
                                result.total_cg)
        traj = extract_trajectory(problem.op.tmesh, problem.op.smesh, result.u,
                                  cfg.point)
        log.info("n=%d dof=%d newton=%d (undamped %d) cg=%d converged=%s "
                 "|F2|=%.2e range=[%.3e, %.6f]", n, rec.dof, rec.newton_iterations,
                 sum(not h.damped for h in result.history), rec.total_cg,
                 result.converged, complementarity_report(problem, result, cfg),
                 result.u.min(), result.u.max())
        for k, h in enumerate(result.history, 1):
            log.debug("  n=%d it=%d active=-%d/+%d inactive=%d cg=%d incr=%.3e%s",
                     n, k, h.lower_active, h.upper_active, h.inactive,
                     h.cg_iterations, h.increment, "" if h.damped else " (undamped)")
        records.append(rec)
        trajectories.append(traj)
        results.append((problem, result))
        if write:
            write_trajectory(os.path.join(config.out, trajectory_filename(cfg.dim, idx)),
                             traj)
    if write:
        write_convergence(os.path.join(config.out, "convergence_hist.csv"), records)
    return records, trajectories, results


def run_unconstrained_convergence(config, levels=None):
    """Rows (n, L2(Q) error, observed order or None) for each level."""
    levels = list(levels or config.levels)
    rows = []
    prev = None
    for n in levels:
        cfg = config.at_level(n)
        problem = setup_problem(cfg)
        u, report = solve_unconstrained(cfg, problem)
        if not report.converged:
            log.warning("n=%d: CG did not converge (rel. residual %.2e)",
                        n, report.relative_residual)
        err = l2q_error(problem.op, u, problem.target, None, cfg.error_order)
        order = None
        if prev is not None:
            order = math.log(prev[1] / err) / math.log(n / prev[0])
        rows.append((n, err, order))
        log.info("n=%d dof=%d cg=%d error=%.6e order=%s", n, problem.op.size,
                 report.iterations, err, "-" if order is None else f"{order:.3f}")
        prev = (n, err)
    return rows


def write_error_table(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "error", "order"])
        for n, err, order in rows:
            w.writerow([n, repr(err), "" if order is None else f"{order:.4f}"])


def config_dict(config):
    return asdict(config)
