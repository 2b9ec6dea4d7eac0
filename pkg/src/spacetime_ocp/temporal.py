"""Temporal P1 discretization on a uniform mesh of (0, T).

Dofs are the hat functions at t_1, ..., t_{N_t}; the value at t = 0 is
pinned to zero, the value at t = T is free (half hat).
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.linalg
from scipy.special import zeta


class EigenbasisError(RuntimeError):
    pass


class SeriesTruncationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TemporalMesh:
    T: float
    N_t: int

    def __post_init__(self):
        if int(self.N_t) < 1:
            raise ValueError(f"N_t must be >= 1, got {self.N_t}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")

    @property
    def h(self):
        return self.T / self.N_t

    @property
    def nodes(self):
        """All nodes t_0 = 0, ..., t_{N_t} = T."""
        return self.h * np.arange(self.N_t + 1)

    def frequencies(self, k):
        """Continuous frequencies (pi/2 + k pi)/T of the sine/cosine series."""
        return (np.pi / 2 + np.pi * np.asarray(k, dtype=float)) / self.T


@dataclass(frozen=True)
class TriDiagonalMatrix:
    """Tridiagonal matrix stored by its three diagonals.

    ``lower[j]`` is entry (j+1, j) and ``upper[j]`` is entry (j, j+1).
    """

    main: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n(self):
        return self.main.shape[0]

    def matvec(self, x):
        # acts along axis 0 so a (N_t, M_x) block is transformed slice-wise
        x = np.asarray(x)
        d = self.main.reshape((-1,) + (1,) * (x.ndim - 1))
        lo = self.lower.reshape((-1,) + (1,) * (x.ndim - 1))
        up = self.upper.reshape((-1,) + (1,) * (x.ndim - 1))
        y = d * x
        if self.n > 1:
            y[1:] += lo * x[:-1]
            y[:-1] += up * x[1:]
        return y

    def to_dense(self):
        return (np.diag(self.main) + np.diag(self.lower, -1)
                + np.diag(self.upper, 1))

    def is_symmetric(self):
        return np.array_equal(self.lower, self.upper)

    def cholesky_ok(self):
        """True iff the banded Cholesky factorization succeeds."""
        ab = np.zeros((2, self.n))
        ab[0, 1:] = self.upper
        ab[1] = self.main
        try:
            scipy.linalg.cholesky_banded(ab)
        except np.linalg.LinAlgError:
            return False
        return True


def assemble_temporal_mass(mesh):
    h = mesh.h
    main = np.full(mesh.N_t, 2.0 * h / 3.0)
    main[-1] = h / 3.0
    off = np.full(mesh.N_t - 1, h / 6.0)
    return TriDiagonalMatrix(main, off, off.copy())


def assemble_temporal_convection(mesh):
    """G[l, k] = int phi_k' phi_l dt."""
    main = np.zeros(mesh.N_t)
    main[-1] = 0.5
    return TriDiagonalMatrix(main, np.full(mesh.N_t - 1, 0.5),
                             np.full(mesh.N_t - 1, -0.5))


def hat_sine_moment(mesh, k, i):
    """int_0^T phi_i(t) sin(omega_k t) dt with omega_k = (pi/2 + k pi)/T.

    ``k`` and ``i`` broadcast; ``i`` runs over 1..N_t.
    """
    k = np.asarray(k)
    i = np.asarray(i)
    if np.any(k < 0) or np.any(i < 1) or np.any(i > mesh.N_t):
        raise ValueError("mode index must be >= 0 and dof index in 1..N_t")
    h = mesh.h
    om = mesh.frequencies(k)
    interior = (2.0 - 2.0 * np.cos(om * h)) * np.sin(om * h * i) / (om**2 * h)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    last = sign * (1.0 - np.cos(om * h)) / (om**2 * h)
    return np.where(i == mesh.N_t, last, interior)


def _series_by_blocks(mesh, series_tol, max_terms, block):
    """Plain truncated summation of sum_k (2/T) om_k b_k b_k^T.

    Terms are added in blocks; summation stops once the terms in
    [K, 2K) change A by less than series_tol (max norm) with K >= 4 N_t.
    """
    N = mesh.N_t
    dofs = np.arange(1, N + 1)
    A = np.zeros((N, N))

    def add(start, stop):
        acc = np.zeros((N, N))
        for s in range(start, stop, block):
            k = np.arange(s, min(s + block, stop))
            B = hat_sine_moment(mesh, k[:, None], dofs[None, :])
            acc += (B.T * ((2.0 / mesh.T) * mesh.frequencies(k))) @ B
        return acc

    K = max(4 * N, 16)
    A += add(0, K)
    while True:
        if 2 * K > max_terms:
            raise SeriesTruncationError(
                f"series did not reach tol {series_tol:g} within {max_terms} terms")
        inc = add(K, 2 * K)
        A += inc
        K *= 2
        if np.abs(inc).max() < series_tol:
            return A


def _series_exact(mesh):
    """Full series summed exactly.

    Apart from the 1/om^3 decay, each term depends on k only through
    om_k h modulo 2 pi, which has period 2 N_t in k.  Grouping terms by
    residue class leaves Hurwitz zeta sums  sum_j (j + q)^-3.
    """
    N, T, h = mesh.N_t, mesh.T, mesh.h
    P = 2 * N
    r = np.arange(P)
    om_h = (2 * r + 1) * np.pi / (2 * N)
    zsum = (T / (P * np.pi))**3 * zeta(3.0, (2 * r + 1) / (2.0 * P))
    g = (2.0 - 2.0 * np.cos(om_h))**2 / h**2 * zsum / T
    # 2 sin(a) sin(b) = cos(a - b) - cos(a + b): Toeplitz minus Hankel part
    S = np.empty(2 * N + 1)
    chunk = max(1, 2**22 // P)
    for s in range(0, 2 * N + 1, chunk):
        m = np.arange(s, min(s + chunk, 2 * N + 1))
        S[m] = np.cos(np.outer(m, om_h)) @ g
    i = np.arange(1, N + 1)
    A = S[np.abs(i[:, None] - i[None, :])]
    A -= S[i[:, None] + i[None, :]]
    w = np.ones(N)
    w[-1] = 0.5
    A *= w[:, None]
    A *= w[None, :]
    return A


def assemble_hilbert_stiffness(mesh, series_tol=1e-10, method="exact",
                               max_terms=10**6, block=4096):
    """A[j, i] = <d/dt phi_i, H_T phi_j> from the sine series of H_T.

    ``method="exact"`` sums the whole series in closed form per residue
    class; ``method="series"`` truncates it (tolerance ``series_tol``,
    capped at ``max_terms`` terms).
    """
    if not series_tol > 0:
        raise ValueError("series_tol must be positive")
    if method == "exact":
        A = _series_exact(mesh)
    elif method == "series":
        A = _series_by_blocks(mesh, series_tol, max_terms, block)
    else:
        raise ValueError(f"unknown method {method!r}")
    return 0.5 * (A + A.T)


@dataclass
class TemporalEigenbasis:
    """Generalized eigenpairs of (A_t, M_t) with M_t-orthonormal vectors.

    In ``"dense"`` mode the eigenvector matrix is stored.  In
    ``"fast-sine"`` mode the columns are scaled samples of
    sin(om_k t) and both transforms run as sine transforms via FFT.
    """

    eigenvalues: np.ndarray
    mass: TriDiagonalMatrix
    mode: str = "dense"
    C: np.ndarray = None
    scale: np.ndarray = None
    workers: int = None
    _dense_cache: np.ndarray = field(default=None, repr=False)

    @property
    def n(self):
        return self.eigenvalues.shape[0]

    @property
    def matrix(self):
        if self.mode == "dense":
            return self.C
        if self._dense_cache is None:
            self._dense_cache = _sampled_sines(self.n) * self.scale
        return self._dense_cache

    def analysis(self, Y):
        """C^T M_t Y, i.e. C^{-1} Y; Y has the temporal index on axis 0."""
        MY = self.mass.matvec(Y)
        if self.mode == "dense":
            return self.C.T @ MY
        # sum_i sin((2k+1) pi i / 2N) y_i == DST-III(y, last entry doubled) / 2
        MY[-1] *= 2.0
        out = scipy.fft.dst(MY, type=3, axis=0, overwrite_x=True,
                            workers=self.workers)
        out *= _bcast(0.5 * self.scale, out)
        return out

    def synthesis(self, Yhat):
        """C Yhat."""
        if self.mode == "dense":
            return self.C @ Yhat
        # sum_k sin((2k+1) pi i / 2N) yhat_k == DST-II(yhat)[i-1] / 2
        Z = _bcast(0.5 * self.scale, Yhat) * Yhat
        return scipy.fft.dst(Z, type=2, axis=0, overwrite_x=True,
                             workers=self.workers)


def _bcast(v, like):
    return v.reshape((-1,) + (1,) * (np.ndim(like) - 1))


def _sampled_sines(N):
    i = np.arange(1, N + 1)
    k = np.arange(N)
    return np.sin(np.outer(i, 2 * k + 1) * (np.pi / (2 * N)))


def eigen_residual(A, M, basis):
    C = basis.matrix
    return np.abs(A @ C - M.matvec(C) * basis.eigenvalues[None, :]).max()


def solve_generalized_evp(A, M):
    """Dense solve of A v = lam M v by Cholesky reduction of M."""
    A = np.asarray(A, dtype=float)
    if A.shape != (M.n, M.n):
        raise ValueError("A and M must have the same dimension")
    try:
        lam, C = scipy.linalg.eigh(A, M.to_dense())
    except np.linalg.LinAlgError as exc:
        raise EigenbasisError("mass matrix is not positive definite") from exc
    if lam[0] <= 0:
        raise EigenbasisError("A_t is not positive definite")
    return TemporalEigenbasis(eigenvalues=lam, mass=M, mode="dense", C=C)


def try_fast_eigenbasis(mesh, A, M, validate_tol=1e-8, workers=None):
    """Sampled-sine eigenbasis, or ``None`` if it fails validation."""
    V = _sampled_sines(mesh.N_t)
    MV = M.matvec(V)
    mnorm = np.einsum("ij,ij->j", V, MV)
    AV = A @ V
    lam = np.einsum("ij,ij->j", V, AV) / mnorm
    if np.any(lam <= 0) or np.any(np.diff(lam) <= 0):
        return None
    scale = 1.0 / np.sqrt(mnorm)
    res = np.abs((AV - MV * lam[None, :]) * scale[None, :]).max()
    if res > validate_tol * lam.max():
        return None
    return TemporalEigenbasis(eigenvalues=lam, mass=M, mode="fast-sine",
                              scale=scale, workers=workers)


def build_temporal_eigenbasis(mesh, A, M, fast=True, validate_tol=1e-8,
                              workers=None):
    if fast:
        basis = try_fast_eigenbasis(mesh, A, M, validate_tol, workers)
        if basis is not None:
            return basis
    return solve_generalized_evp(A, M)
