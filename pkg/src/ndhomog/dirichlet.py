"""Conforming P1 solver for the constant-coefficient homogenized problem.

Since the effective matrix is constant and symmetric positive definite,
the nondivergence equation -A_bar : D^2 u = f coincides with the
divergence-form problem -div(A_bar grad u) = f, which a standard
H^1-conforming Galerkin method handles: find u_h with u_h = I_h g on the
boundary and

    (A_bar grad u_h, grad v_h) = (f, v_h)    for all interior v_h.

Domains are axis-aligned rectangles (0, a) x (0, b) with M subdivisions
per axis and the same diagonal triangle split as the periodic cell mesh.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .errors import SolverFailure, ValidationError

__all__ = [
    "DirichletMesh",
    "HomogenizedProblem",
    "FESolution",
    "ErrorNorms",
    "build_dirichlet_mesh",
    "solve_homogenized",
    "error_norms",
]

# 6-point degree-4 triangle rule (barycentric point groups and weights)
_TRI6_A = 0.445948490915965
_TRI6_B = 0.091576213509771
_TRI6_WA = 0.223381589678011
_TRI6_WB = 0.109951743655322
_TRI6_POINTS = np.array([
    [_TRI6_A, _TRI6_A], [1 - 2 * _TRI6_A, _TRI6_A], [_TRI6_A, 1 - 2 * _TRI6_A],
    [_TRI6_B, _TRI6_B], [1 - 2 * _TRI6_B, _TRI6_B], [_TRI6_B, 1 - 2 * _TRI6_B],
])
_TRI6_WEIGHTS = np.array([_TRI6_WA] * 3 + [_TRI6_WB] * 3)

# 3-point edge-midpoint rule (degree 2), used for the load vector
_TRI3_POINTS = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
_TRI3_WEIGHTS = np.array([1.0, 1.0, 1.0]) / 3.0


@dataclass
class DirichletMesh:
    """Uniform triangulation of (0, a) x (0, b), boundary nodes flagged."""

    a: float
    b: float
    M: int
    vertices: np.ndarray       # ((M+1)^2, 2)
    triangles: np.ndarray      # (2 M^2, 3)
    grads: np.ndarray          # (2 M^2, 3, 2)
    areas: np.ndarray          # (2 M^2,)
    boundary: np.ndarray       # ((M+1)^2,) bool

    @property
    def n_vertices(self) -> int:
        return (self.M + 1) ** 2

    @property
    def h(self) -> float:
        return max(self.a, self.b) / self.M

    def element_points(self, ref_points: np.ndarray) -> np.ndarray:
        """Physical coordinates of reference points in every element."""
        x0 = self.vertices[self.triangles[:, 0]]
        e1 = self.vertices[self.triangles[:, 1]] - x0
        e2 = self.vertices[self.triangles[:, 2]] - x0
        return (x0[:, None, :] + ref_points[None, :, 0, None] * e1[:, None, :]
                + ref_points[None, :, 1, None] * e2[:, None, :])


def build_dirichlet_mesh(a: float, b: float, M: int) -> DirichletMesh:
    if not (a > 0 and b > 0):
        raise ValidationError("domain sides must be positive")
    if M < 2:
        raise ValidationError("build_dirichlet_mesh needs M >= 2")
    n1 = M + 1
    ii, jj = np.meshgrid(np.arange(n1), np.arange(n1), indexing="ij")
    vertices = np.column_stack([ii.ravel() * (a / M), jj.ravel() * (b / M)])
    boundary = ((ii == 0) | (ii == M) | (jj == 0) | (jj == M)).ravel()

    ci, cj = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
    ci, cj = ci.ravel(), cj.ravel()
    n00 = ci * n1 + cj
    n10 = (ci + 1) * n1 + cj
    n11 = (ci + 1) * n1 + (cj + 1)
    n01 = ci * n1 + (cj + 1)
    triangles = np.empty((2 * M * M, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([n00, n10, n11])
    triangles[1::2] = np.column_stack([n00, n11, n01])

    x0 = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - x0
    e2 = vertices[triangles[:, 2]] - x0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    areas = 0.5 * np.abs(det)
    grads = np.empty((len(det), 3, 2))
    grads[:, 1, 0] = e2[:, 1] / det
    grads[:, 1, 1] = -e2[:, 0] / det
    grads[:, 2, 0] = -e1[:, 1] / det
    grads[:, 2, 1] = e1[:, 0] / det
    grads[:, 0, :] = -grads[:, 1, :] - grads[:, 2, :]
    return DirichletMesh(a=a, b=b, M=M, vertices=vertices, triangles=triangles,
                         grads=grads, areas=areas, boundary=boundary)


@dataclass(frozen=True)
class HomogenizedProblem:
    """Constant-coefficient Dirichlet problem -A_bar : D^2 u = f, u = g."""

    A_bar: np.ndarray
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        A = np.asarray(self.A_bar, dtype=float)
        if A.shape != (2, 2) or abs(A[0, 1] - A[1, 0]) > 1e-14 * max(1.0, np.abs(A).max()):
            raise ValidationError("A_bar must be a symmetric 2x2 matrix")
        ev = np.linalg.eigvalsh(0.5 * (A + A.T))
        if ev[0] <= 0:
            raise ValidationError(
                f"A_bar must be positive definite; eigenvalues {ev}")


class FESolution:
    """Nodal P1 solution with a pointwise evaluator."""

    def __init__(self, mesh: DirichletMesh, values: np.ndarray, residual: float):
        self.mesh = mesh
        self.values = np.asarray(values, dtype=float)
        self.residual = residual

    def eval(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        if single:
            pts = pts[None, :]
        mesh = self.mesh
        sx = np.clip(pts[:, 0] / mesh.a * mesh.M, 0.0, mesh.M * (1 - 1e-16))
        sy = np.clip(pts[:, 1] / mesh.b * mesh.M, 0.0, mesh.M * (1 - 1e-16))
        i, j = sx.astype(int), sy.astype(int)
        fx, fy = sx - i, sy - j
        lower = fy <= fx
        elem = 2 * (i * mesh.M + j) + np.where(lower, 0, 1)
        tri = mesh.triangles[elem]
        # barycentric coordinates on the two congruent triangle shapes
        l1 = np.where(lower, fx - fy, fx)
        l2 = np.where(lower, fy, fy - fx)
        vals = (self.values[tri[:, 0]] * (1 - l1 - l2)
                + self.values[tri[:, 1]] * l1 + self.values[tri[:, 2]] * l2)
        return float(vals[0]) if single else vals

    __call__ = eval

    def gradients(self) -> np.ndarray:
        """Constant gradient per element, (ntri, 2)."""
        vals = self.values[self.mesh.triangles]
        return np.einsum("tn,tnb->tb", vals, self.mesh.grads)


def solve_homogenized(problem: HomogenizedProblem,
                      mesh: DirichletMesh) -> FESolution:
    """Assemble the constant-coefficient stiffness system, interpolate the
    boundary data at boundary nodes, and solve for the interior values."""
    A = np.asarray(problem.A_bar, dtype=float)
    A = 0.5 * (A + A.T)
    grads = mesh.grads
    flux = np.einsum("ab,tnb->tna", A, grads)
    blocks = np.einsum("tna,tma->tnm", flux, grads) * mesh.areas[:, None, None]
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_vertices
    K = scipy.sparse.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    pts = mesh.element_points(_TRI3_POINTS)
    fvals = np.asarray(problem.f(pts.reshape(-1, 2)), dtype=float).reshape(len(tri), -1)
    lam = np.column_stack([1 - _TRI3_POINTS.sum(axis=1), _TRI3_POINTS[:, 0], _TRI3_POINTS[:, 1]])
    load_loc = (fvals[:, :, None] * lam[None, :, :] * _TRI3_WEIGHTS[None, :, None]).sum(axis=1)
    load_loc *= mesh.areas[:, None]
    F = np.zeros(n)
    np.add.at(F, tri.ravel(), load_loc.ravel())

    u = np.zeros(n)
    bnd = mesh.boundary
    u[bnd] = np.asarray(problem.g(mesh.vertices[bnd]), dtype=float)
    interior = ~bnd
    K_ii = K[interior][:, interior].tocsc()
    rhs = F[interior] - K[interior][:, bnd] @ u[bnd]
    try:
        lu = scipy.sparse.linalg.splu(K_ii)
    except RuntimeError as exc:
        raise SolverFailure(f"stiffness factorization failed: {exc}") from exc
    ui = lu.solve(rhs)
    if not np.all(np.isfinite(ui)):
        raise SolverFailure("homogenized solve produced non-finite values")
    resid = float(np.linalg.norm(K_ii @ ui - rhs))
    scale = max(float(np.linalg.norm(rhs)), 1e-300)
    if resid > 1e-10 * scale:
        raise SolverFailure(
            f"homogenized solve residual {resid:.3e} exceeds 1e-10 * ||rhs||")
    u[interior] = ui
    return FESolution(mesh, u, residual=resid / scale)


@dataclass(frozen=True)
class ErrorNorms:
    l2: float
    h1_semi: float
    max_nodal: float


def error_norms(u_h: FESolution, reference,
                reference_grad=None) -> ErrorNorms:
    """L2, H1-seminorm, and max-nodal errors against a reference evaluator.

    The gradient of the reference is taken from ``reference_grad`` (points
    -> (P, 2)) when available, otherwise by central finite differences.
    """
    mesh = u_h.mesh
    tri = mesh.triangles
    pts = mesh.element_points(_TRI6_POINTS)
    flat = pts.reshape(-1, 2)
    ref_vals = np.asarray(reference(flat), dtype=float).reshape(len(tri), -1)
    lam = np.column_stack([1 - _TRI6_POINTS.sum(axis=1), _TRI6_POINTS[:, 0], _TRI6_POINTS[:, 1]])
    uh_vals = np.einsum("tn,qn->tq", u_h.values[tri], lam)
    w = _TRI6_WEIGHTS[None, :] * mesh.areas[:, None]
    l2 = math.sqrt(float((w * (uh_vals - ref_vals) ** 2).sum()))

    if reference_grad is None:
        eps = 1e-6 * mesh.h

        def reference_grad(p):
            out = np.empty_like(p)
            for axis in range(2):
                dp = np.zeros_like(p)
                dp[:, axis] = eps
                out[:, axis] = (np.asarray(reference(p + dp), dtype=float)
                                - np.asarray(reference(p - dp), dtype=float)) / (2 * eps)
            return out

    ref_grad = np.asarray(reference_grad(flat), dtype=float).reshape(len(tri), -1, 2)
    uh_grad = u_h.gradients()[:, None, :]
    h1 = math.sqrt(float((w[:, :, None] * (uh_grad - ref_grad) ** 2).sum()))

    nodal = np.abs(u_h.values - np.asarray(reference(mesh.vertices), dtype=float))
    return ErrorNorms(l2=l2, h1_semi=h1, max_nodal=float(nodal.max()))
