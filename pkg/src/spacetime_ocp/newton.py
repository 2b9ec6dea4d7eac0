"""Semi-smooth Newton (primal-dual active set) method for box state constraints.

Solves  K u - lam = f  together with the complementarity relation

    lam = min(0, lam + c (upper - u)) + max(0, lam + c (lower - u)),

i.e. lam <= 0 where u touches the upper bound, lam >= 0 at the lower
bound and lam = 0 in between.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .krylov import build_mass_diag_preconditioner, pcg_solve
from .operator import apply_operator

log = logging.getLogger(__name__)

INACTIVE, LOWER, UPPER = 0, -1, 1


class NewtonStepError(RuntimeError):
    pass


@dataclass(frozen=True)
class BoxConstraints:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        up = np.asarray(self.upper, dtype=float)
        if lo.shape != up.shape:
            raise ValueError("lower and upper bounds differ in shape")
        if not np.all(lo < up):
            raise ValueError("bounds must satisfy lower < upper at every dof")
        if np.any(lo > 0) or np.any(up < 0):
            raise ValueError("zero must be admissible: lower <= 0 <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @classmethod
    def constant(cls, size, lower, upper):
        return cls(np.full(size, float(lower)), np.full(size, float(upper)))

    def contains(self, u, tol=0.0):
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))


@dataclass(frozen=True)
class ActiveSetPartition:
    """Per-dof label: -1 lower-active, +1 upper-active, 0 inactive."""

    labels: np.ndarray

    @property
    def lower_active(self):
        return np.flatnonzero(self.labels == LOWER)

    @property
    def upper_active(self):
        return np.flatnonzero(self.labels == UPPER)

    @property
    def inactive(self):
        return np.flatnonzero(self.labels == INACTIVE)

    @property
    def active_mask(self):
        return self.labels != INACTIVE

    def sizes(self):
        return (int(np.sum(self.labels == LOWER)),
                int(np.sum(self.labels == UPPER)),
                int(np.sum(self.labels == INACTIVE)))

    def __eq__(self, other):
        return np.array_equal(self.labels, other.labels)

    __hash__ = None


@dataclass
class NewtonConfig:
    c: float = 1.0
    omega: float = 0.1
    increment_tol: float = 1e-3
    cg_rel_tol: float = 1e-10
    max_newton: int = 200
    cg_max_iter: int = None
    # after damped convergence, finish with undamped steps until the
    # active set reproduces itself (exact complementarity)
    polish: bool = True
    max_polish: int = 20

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("c must be positive")
        if not 0 < self.omega <= 1:
            raise ValueError("omega must lie in (0, 1]")
        if not self.increment_tol > 0 or not self.cg_rel_tol > 0:
            raise ValueError("tolerances must be positive")
        if self.max_newton < 1:
            raise ValueError("max_newton must be >= 1")


@dataclass
class NewtonIteration:
    lower_active: int
    upper_active: int
    inactive: int
    cg_iterations: int
    cg_residual: float
    increment: float
    damped: bool = True


@dataclass
class NewtonResult:
    u: np.ndarray
    lam: np.ndarray
    partition: ActiveSetPartition
    converged: bool
    history: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.history)

    @property
    def total_cg(self):
        return sum(h.cg_iterations for h in self.history)


def classify_active_sets(u, lam, constraints, c):
    labels = np.zeros(np.shape(u), dtype=np.int8)
    labels[lam + c * (constraints.lower - u) > 0] = LOWER
    # mutually exclusive with the line above when lower < upper and c > 0
    labels[lam + c * (constraints.upper - u) < 0] = UPPER
    return ActiveSetPartition(labels)


def semismooth_residual(u, lam, f, op, constraints, c):
    F1 = apply_operator(op, u) - lam - f
    F2 = (lam - np.minimum(0.0, lam + c * (constraints.upper - u))
          - np.maximum(0.0, lam + c * (constraints.lower - u)))
    return F1, F2


def apply_reduced_operator(op, partition, v):
    """Inactive block of K_h on inactive dofs, identity on active dofs."""
    act = partition.active_mask
    vi = np.where(act, 0.0, v)
    return np.where(act, v, apply_operator(op, vi))


def newton_step(op, f, constraints, config, u, lam):
    """One full (undamped) semi-smooth Newton step from (u, lam).

    Returns (u_new, lam_new, partition, cg_report).
    """
    partition = classify_active_sets(u, lam, constraints, config.c)
    act = partition.active_mask
    u_act = np.zeros_like(u)
    u_act[partition.lower_active] = constraints.lower[partition.lower_active]
    u_act[partition.upper_active] = constraints.upper[partition.upper_active]

    rhs = np.where(act, 0.0, f - apply_operator(op, u_act))
    precond = build_mass_diag_preconditioner(op.M_t, op.M_x, act)
    u_in, report = pcg_solve(lambda v: apply_reduced_operator(op, partition, v),
                             rhs, precond, config.cg_rel_tol,
                             config.cg_max_iter)
    if not report.converged:
        raise NewtonStepError(
            f"inner CG stalled at relative residual {report.relative_residual:.3e}"
            f" after {report.iterations} iterations")
    u_new = np.where(act, u_act, u_in)
    # multipliers from K u - lam - f = 0 on the active rows
    lam_new = np.where(act, apply_operator(op, u_new) - f, 0.0)
    return u_new, lam_new, partition, report


def initial_guess(op, f, constraints):
    u0 = 0.5 * (constraints.lower + constraints.upper)
    return u0, apply_operator(op, u0) - f


def _polish(op, f, constraints, config, u, lam, history):
    """Undamped steps until classify(u_new, lam_new) equals the step's partition."""
    for _ in range(config.max_polish):
        u_new, lam_new, partition, report = newton_step(
            op, f, constraints, config, u, lam)
        increment = np.abs(u_new - u).max() + np.abs(lam_new - lam).max()
        history.append(NewtonIteration(*partition.sizes(), report.iterations,
                                       report.relative_residual, increment,
                                       damped=False))
        u, lam = u_new, lam_new
        final = classify_active_sets(u, lam, constraints, config.c)
        if final == partition:
            return u, lam, final, True
    return u, lam, final, False


def newton_solve(op, f, constraints, config=None, initial=None):
    config = config or NewtonConfig()
    u, lam = initial if initial is not None else initial_guess(op, f, constraints)
    u = np.array(u, dtype=float)
    lam = np.array(lam, dtype=float)
    history = []
    w = config.omega
    for _ in range(config.max_newton):
        u_full, lam_full, partition, report = newton_step(
            op, f, constraints, config, u, lam)
        u_next = (1.0 - w) * u + w * u_full
        lam_next = (1.0 - w) * lam + w * lam_full
        increment = np.abs(u_next - u).max() + np.abs(lam_next - lam).max()
        history.append(NewtonIteration(*partition.sizes(), report.iterations,
                                       report.relative_residual, increment,
                                       damped=w < 1.0))
        log.debug("newton %d: active -%d/+%d, inactive %d, cg %d, incr %.3e",
                  len(history), *partition.sizes(), report.iterations, increment)
        u, lam = u_next, lam_next
        next_partition = classify_active_sets(u, lam, constraints, config.c)
        if next_partition != partition:
            continue
        if w == 1.0:
            return NewtonResult(u, lam, next_partition, True, history)
        if increment < config.increment_tol:
            if not config.polish:
                return NewtonResult(u, lam, next_partition, True, history)
            u, lam, final, ok = _polish(op, f, constraints, config, u, lam, history)
            return NewtonResult(u, lam, final, ok, history)
    return NewtonResult(u, lam, classify_active_sets(u, lam, constraints, config.c),
                        False, history)
