"""Preconditioned conjugate gradients with a diagonal (Jacobi) preconditioner."""
from dataclasses import dataclass, field

import numpy as np


class CGBreakdown(ArithmeticError):
    """p^T A p <= 0: the operator is not positive definite."""


@dataclass(frozen=True)
class JacobiPreconditioner:
    inv_diag: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.inv_diag)) or np.any(self.inv_diag <= 0):
            raise ValueError("preconditioner reciprocals must be finite and positive")

    def __call__(self, r):
        return self.inv_diag * r


@dataclass
class SolveReport:
    iterations: int
    relative_residual: float
    converged: bool
    energy_history: list = field(default_factory=list, repr=False)


def build_mass_diag_preconditioner(M_t, M_x, active_mask=None):
    """Diagonal of M_t (x) M_x, with entries on the active set replaced by 1."""
    diag = np.outer(M_t.main, M_x.diagonal()).ravel()
    if active_mask is not None:
        diag = np.where(active_mask, 1.0, diag)
    if np.any(diag <= 0):
        raise ValueError("nonpositive diagonal entry in mass preconditioner")
    return JacobiPreconditioner(1.0 / diag)


def default_max_iter(n):
    return int(10 * np.sqrt(n)) + 100


def pcg_solve(apply, b, precond=None, rel_tol=1e-10, max_iter=None,
              callback=None):
    """Solve apply(x) = b from a zero initial guess.

    Stops on the unpreconditioned residual ||b - A x|| <= rel_tol ||b||.
    The recurrence residual is checked against an explicit recomputation
    before convergence is declared.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    if max_iter is None:
        max_iter = default_max_iter(n)
    if precond is None:
        precond = JacobiPreconditioner(np.ones(n))
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, SolveReport(0, 0.0, True)
    target = rel_tol * bnorm

    r = b.copy()
    z = precond(r)
    p = z.copy()
    rz = r @ z
    history = [rz]
    it = 0
    while it < max_iter:
        Ap = apply(p)
        pAp = p @ Ap
        if not pAp > 0:
            raise CGBreakdown(f"p^T A p = {pAp:g} at iteration {it}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        if callback is not None:
            callback(x)
        if np.linalg.norm(r) <= target:
            r = b - apply(x)
            rnorm = np.linalg.norm(r)
            if rnorm <= target:
                return x, SolveReport(it, rnorm / bnorm, True, history)
        z = precond(r)
        rz_new = r @ z
        history.append(rz_new)
        p = z + (rz_new / rz) * p
        rz = rz_new
    rnorm = np.linalg.norm(b - apply(x))
    return x, SolveReport(it, rnorm / bnorm, rnorm <= target, history)
