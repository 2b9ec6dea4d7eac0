"""Matrix-free space-time operators on the tensor space W_hx (x) V_ht.

Vectors are stored time-major: entry (k, i) of a space-time vector sits at
``k * M_x + i`` (0-based), so ``v.reshape(N_t, M_x)`` gives one spatial
slice per temporal dof.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import spatial, temporal

DENSE_ORACLE_LIMIT = 4096


@dataclass
class SystemOperator:
    rho: float
    tmesh: temporal.TemporalMesh
    smesh: spatial.SimplicialMesh
    M_t: temporal.TriDiagonalMatrix
    G_t: temporal.TriDiagonalMatrix
    A_t: np.ndarray
    basis: temporal.TemporalEigenbasis
    M_x: sp.csr_matrix
    A_x: sp.csr_matrix
    spatial_matvecs: int = 0

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError(f"rho must be nonnegative, got {self.rho}")
        if self.M_x.shape != self.A_x.shape or self.basis.n != self.M_t.n:
            raise ValueError("inconsistent operator factors")

    @property
    def N_t(self):
        return self.M_t.n

    @property
    def M_x_dofs(self):
        return self.M_x.shape[0]

    @property
    def size(self):
        return self.N_t * self.M_x_dofs

    def slices(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.size,):
            raise ValueError(f"expected vector of length {self.size}, "
                             f"got shape {v.shape}")
        return v.reshape(self.N_t, self.M_x_dofs)

    def _spatial(self, X, mats):
        # one sparse product per temporal slice and matrix
        self.spatial_matvecs += len(mats) * X.shape[0]
        # spatial matrices are symmetric, so X Mat = (Mat X^T)^T row-major
        return [np.ascontiguousarray(X @ Mat) for Mat in mats]

    def _eigen_apply(self, v, mass_shift, stiff):
        """(M_t C (x) I) diag-block (C^{-1} (x) I) v with slice blocks
        mass_shift[i] * M_x + stiff * A_x."""
        Vh = self.basis.analysis(self.slices(v))
        MV, AV = self._spatial(Vh, (self.M_x, self.A_x))
        MV *= mass_shift[:, None]
        if stiff != 1.0:
            AV *= stiff
        MV += AV
        What = MV
        return self.M_t.matvec(self.basis.synthesis(What)).ravel()


def build_operator(tmesh, smesh, rho, fast=True, series_tol=1e-10,
                   workers=None):
    M_t = temporal.assemble_temporal_mass(tmesh)
    A_t = temporal.assemble_hilbert_stiffness(tmesh, series_tol)
    basis = temporal.build_temporal_eigenbasis(tmesh, A_t, M_t, fast=fast,
                                               workers=workers)
    return SystemOperator(
        rho=float(rho), tmesh=tmesh, smesh=smesh, M_t=M_t,
        G_t=temporal.assemble_temporal_convection(tmesh), A_t=A_t,
        basis=basis, M_x=spatial.assemble_spatial_mass(smesh),
        A_x=spatial.assemble_spatial_stiffness(smesh))


def apply_operator(op, v):
    """K_h v = (M_t (x) M_x + rho (A_t (x) M_x + M_t (x) A_x)) v.

    In the temporal eigenbasis A_t becomes diag(lam) against M_t, so each
    slice sees (1 + rho lam_i) M_x + rho A_x.
    """
    return op._eigen_apply(v, 1.0 + op.rho * op.basis.eigenvalues, op.rho)


def apply_energy_operator(op, v):
    """D v = (A_t (x) M_x + M_t (x) A_x) v."""
    return op._eigen_apply(v, op.basis.eigenvalues, 1.0)


def anisotropic_norm_sq(op, v):
    return float(np.dot(v, apply_energy_operator(op, v)))


def apply_mass(op, v):
    V = op.slices(v)
    (MV,) = op._spatial(V, (op.M_x,))
    return op.M_t.matvec(MV).ravel()


def recover_control(op, u):
    """Dual-vector form of the control, (G_t (x) M_x + M_t (x) A_x) u."""
    U = op.slices(u)
    MU, AU = op._spatial(U, (op.M_x, op.A_x))
    return (op.G_t.matvec(MU) + op.M_t.matvec(AU)).ravel()


def assemble_dense_oracle(op, which):
    """Explicit Kronecker assembly of K, D or B (small problems only)."""
    if op.size > DENSE_ORACLE_LIMIT:
        raise ValueError(f"dense oracle limited to {DENSE_ORACLE_LIMIT} "
                         f"dofs, problem has {op.size}")
    Mt, Gt, At = op.M_t.to_dense(), op.G_t.to_dense(), op.A_t
    Mx, Ax = op.M_x.toarray(), op.A_x.toarray()
    if which == "K":
        return np.kron(Mt, Mx) + op.rho * (np.kron(At, Mx) + np.kron(Mt, Ax))
    if which == "D":
        return np.kron(At, Mx) + np.kron(Mt, Ax)
    if which == "B":
        return np.kron(Gt, Mx) + np.kron(Mt, Ax)
    raise ValueError(f"unknown operator {which!r}, expected K, D or B")


def temporal_gauss(tmesh, order):
    """Gauss points/weights on every temporal interval with hat values.

    Returns (t (Q,), w (Q,), sparse (N_t, Q) matrix of phi_k(t_q)).
    """
    npts = (order + 2) // 2
    x, w = np.polynomial.legendre.leggauss(npts)
    s = (x + 1.0) / 2.0
    h = tmesh.h
    elem = np.repeat(np.arange(tmesh.N_t), npts)
    loc = np.tile(s, tmesh.N_t)
    t = h * (elem + loc)
    wt = np.tile(w * h / 2.0, tmesh.N_t)
    # interval e spans nodes e, e+1; dof k sits at node k (dof 0 = node 1)
    rows = np.concatenate([elem - 1, elem])
    vals = np.concatenate([1.0 - loc, loc])
    cols = np.concatenate([np.arange(t.size)] * 2)
    keep = rows >= 0
    Phi = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                        shape=(tmesh.N_t, t.size))
    return t, wt, Phi


def assemble_load_vector(op, target, quad_order=3, spatial_order=None):
    """f[(k, i)] = int_Q target(x, t) phi_k(t) psi_i(x).

    ``target(x, t)`` takes points of shape (P, d) and a scalar time.
    """
    if quad_order not in (1, 2, 3, 4, 5):
        raise ValueError(f"unsupported quadrature order {quad_order}")
    t, wt, Phi = temporal_gauss(op.tmesh, quad_order)
    pts, wx, verts, lam = spatial.quadrature_points(
        op.smesh, spatial_order or quad_order)
    PsiW = spatial.quadrature_basis_matrix(op.smesh, verts, lam).T.multiply(
        wx[None, :]).tocsr()
    F = np.zeros((op.N_t, op.M_x_dofs))
    for q in range(t.size):
        row = Phi[:, q].toarray().ravel()
        nz = np.flatnonzero(row)
        if nz.size == 0:
            continue
        fx = PsiW @ np.asarray(target(pts, t[q]), dtype=float)
        F[nz] += (wt[q] * row[nz])[:, None] * fx[None, :]
    return F.ravel()
