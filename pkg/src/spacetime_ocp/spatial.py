"""Structured simplicial P1 finite elements on the unit cube (0,1)^d."""
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi


class MeshError(ValueError):
    pass


def _kuhn_patterns(d):
    """Local vertex offsets of the d! Kuhn simplices of a unit cube.

    Each simplex walks from the origin to (1, ..., 1) by switching on
    one coordinate at a time in the order given by a permutation.
    """
    patterns = []
    for perm in itertools.permutations(range(d)):
        corner = np.zeros(d, dtype=int)
        verts = [corner.copy()]
        for axis in perm:
            corner[axis] = 1
            verts.append(corner.copy())
        patterns.append(np.array(verts))
    return patterns


@dataclass(frozen=True)
class SimplicialMesh:
    d: int
    n: int
    vertices: np.ndarray     # (n_vertices, d)
    simplices: np.ndarray    # (n_simplices, d + 1) vertex indices
    dof_of_vertex: np.ndarray  # -1 on the boundary
    vertex_of_dof: np.ndarray

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def n_dofs(self):
        return self.vertex_of_dof.shape[0]

    def vertex_index(self, multi):
        """Flat vertex number of integer grid coordinates (x1 fastest)."""
        multi = np.asarray(multi)
        strides = (self.n + 1) ** np.arange(self.d)
        return multi @ strides

    def volumes(self):
        P = self.vertices[self.simplices]
        J = P[:, 1:, :] - P[:, :1, :]
        return np.abs(np.linalg.det(J)) / math.factorial(self.d)


def build_structured_mesh(d, n):
    if d not in (1, 2, 3):
        raise MeshError(f"dimension must be 1, 2 or 3, got {d}")
    if int(n) != n or n < 2:
        raise MeshError(f"need at least 2 cells per axis, got {n}")
    n = int(n)
    strides = (n + 1) ** np.arange(d)
    # x1 varies fastest
    grid = (np.arange((n + 1) ** d)[:, None] // strides) % (n + 1)
    vertices = grid / n
    cubes = (np.arange(n ** d)[:, None] // n ** np.arange(d)) % n
    cells = []
    for pattern in _kuhn_patterns(d):
        cells.append((cubes[:, None, :] + pattern[None, :, :]) @ strides)
    # simplices of one cube are contiguous
    simplices = np.stack(cells, axis=1).reshape(-1, d + 1)

    interior = np.all((grid > 0) & (grid < n), axis=1)
    dof_of_vertex = np.full(vertices.shape[0], -1)
    vertex_of_dof = np.flatnonzero(interior)
    dof_of_vertex[vertex_of_dof] = np.arange(vertex_of_dof.size)
    return SimplicialMesh(d, n, vertices, simplices, dof_of_vertex,
                          vertex_of_dof)


def _element_geometry(mesh):
    """Volumes and barycentric gradients (n_simplices, d+1, d)."""
    P = mesh.vertices[mesh.simplices]
    J = P[:, 1:, :] - P[:, :1, :]
    det = np.linalg.det(J)
    if np.any(np.abs(det) < 1e-14 * mesh.h**mesh.d):
        raise MeshError("degenerate simplex in mesh")
    vol = np.abs(det) / math.factorial(mesh.d)
    # x - p0 = J^T xi, so grad xi_j is row j of J^{-T}
    Jinv = np.linalg.inv(J).transpose(0, 2, 1)
    grads = np.concatenate([-Jinv.sum(axis=1, keepdims=True), Jinv], axis=1)
    return vol, grads


def _restrict(mesh, rows, cols, vals):
    full = sp.coo_matrix((vals, (rows, cols)),
                         shape=(mesh.vertices.shape[0],) * 2).tocsr()
    idx = mesh.vertex_of_dof
    return full, _canonical(full[idx][:, idx])


def _canonical(A):
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


def _scatter_indices(mesh):
    S = mesh.simplices
    rows = np.repeat(S, S.shape[1], axis=1).ravel()
    cols = np.tile(S, (1, S.shape[1])).ravel()
    return rows, cols


def assemble_spatial_stiffness(mesh, full=False):
    vol, grads = _element_geometry(mesh)
    local = np.einsum("e,eid,ejd->eij", vol, grads, grads)
    rows, cols = _scatter_indices(mesh)
    A_full, A = _restrict(mesh, rows, cols, local.ravel())
    return (A, A_full) if full else A


def assemble_spatial_mass(mesh, full=False):
    d = mesh.d
    vol, _ = _element_geometry(mesh)
    ref = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    local = vol[:, None, None] * ref[None]
    rows, cols = _scatter_indices(mesh)
    M_full, M = _restrict(mesh, rows, cols, local.ravel())
    return (M, M_full) if full else M


def locate(mesh, x):
    """Containing Kuhn simplex of each point.

    Returns (vertex indices (P, d+1), barycentric weights (P, d+1)).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != mesh.d:
        raise ValueError(f"points must have {mesh.d} coordinates")
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("point outside the unit cube")
    n = mesh.n
    s = x * n
    cube = np.minimum(np.floor(s).astype(int), n - 1)
    xi = s - cube
    order = np.argsort(-xi, axis=1, kind="stable")
    xs = np.take_along_axis(xi, order, axis=1)
    weights = np.empty((x.shape[0], mesh.d + 1))
    weights[:, 0] = 1.0 - xs[:, 0]
    weights[:, 1:-1] = xs[:, :-1] - xs[:, 1:]
    weights[:, -1] = xs[:, -1]
    corners = np.zeros((x.shape[0], mesh.d + 1, mesh.d), dtype=int)
    for j in range(mesh.d):
        step = np.zeros((x.shape[0], mesh.d), dtype=int)
        np.put_along_axis(step, order[:, j:j + 1], 1, axis=1)
        corners[:, j + 1] = corners[:, j] + step
    verts = mesh.vertex_index(cube[:, None, :] + corners)
    return verts, weights


def interpolation_matrix(mesh, x):
    """Sparse (P, M_x) matrix mapping interior dof values to values at x."""
    verts, weights = locate(mesh, x)
    dofs = mesh.dof_of_vertex[verts]
    keep = dofs >= 0
    rows = np.broadcast_to(np.arange(verts.shape[0])[:, None], verts.shape)
    return sp.csr_matrix((weights[keep], (rows[keep], dofs[keep])),
                         shape=(verts.shape[0], mesh.n_dofs))


def evaluate_fe_function(mesh, dofs, x):
    values = interpolation_matrix(mesh, x) @ np.asarray(dofs)
    return values[0] if np.ndim(x) == 1 else values


def nodal_interpolant(mesh, g):
    return g(mesh.vertices[mesh.vertex_of_dof])


def _gauss_jacobi01(n, alpha):
    """n-point rule on [0, 1] for the weight (1 - u)^alpha."""
    x, w = roots_jacobi(n, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def simplex_quadrature(d, order):
    """Quadrature on the reference simplex conv{0, e_1, ..., e_d}.

    Returns (barycentric points (Q, d+1), weights (Q,)), weights summing
    to 1/d!.
    """
    if d not in (1, 2, 3):
        raise ValueError(f"unsupported dimension {d}")
    if order not in (1, 2, 3, 4, 5):
        raise ValueError(f"unsupported quadrature order {order}")
    vol = 1.0 / math.factorial(d)
    if order == 1:
        bary = np.full((1, d + 1), 1.0 / (d + 1))
        return bary, np.array([vol])
    if order == 2 and d == 2:
        bary = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
        return bary, np.full(3, vol / 3)
    if order == 2 and d == 3:
        a = (5.0 - math.sqrt(5.0)) / 20.0
        bary = np.full((4, 4), a)
        np.fill_diagonal(bary, 1.0 - 3.0 * a)
        return bary, np.full(4, vol / 4)
    # collapsed-coordinate Gauss-Jacobi product rule
    m = (order + 2) // 2
    rules = [_gauss_jacobi01(m, float(d - 1 - j)) for j in range(d)]
    pts = np.array(list(itertools.product(*[r[0] for r in rules])))
    wts = np.prod(np.array(list(itertools.product(*[r[1] for r in rules]))),
                  axis=1)
    xi = np.empty_like(pts)
    rest = np.ones(pts.shape[0])
    for j in range(d):
        xi[:, j] = pts[:, j] * rest
        rest = rest * (1.0 - pts[:, j])
    bary = np.column_stack([1.0 - xi.sum(axis=1), xi])
    return bary, wts


def quadrature_points(mesh, order):
    """Physical quadrature points and weights over all simplices.

    Returns (points (E*Q, d), weights (E*Q,), vertex indices (E*Q, d+1),
    barycentric coordinates (E*Q, d+1)).
    """
    bary, w = simplex_quadrature(mesh.d, order)
    P = mesh.vertices[mesh.simplices]          # (E, d+1, d)
    vol = mesh.volumes()
    pts = np.einsum("qa,ead->eqd", bary, P).reshape(-1, mesh.d)
    wts = (vol[:, None] * (w[None, :] * math.factorial(mesh.d))).ravel()
    verts = np.repeat(mesh.simplices, bary.shape[0], axis=0)
    lam = np.tile(bary, (mesh.simplices.shape[0], 1))
    return pts, wts, verts, lam


def quadrature_basis_matrix(mesh, verts, lam):
    """Sparse (points, M_x) matrix of interior hat values at quadrature points."""
    dofs = mesh.dof_of_vertex[verts]
    keep = dofs >= 0
    rows = np.broadcast_to(np.arange(verts.shape[0])[:, None], verts.shape)
    return sp.csr_matrix((lam[keep], (rows[keep], dofs[keep])),
                         shape=(verts.shape[0], mesh.n_dofs))
