"""Stabilized vector-P1 finite element method for the invariant measure.

On a uniform periodic triangulation of the unit cell, the method solves

    b(w, p) = (gamma A : Dw, div p) + (curl w, curl p) = (gamma, A : Dw)

for a zero-mean periodic vector field p (two scalar Lagrange multipliers
enforce the component means exactly), and reconstructs

    r_tilde_h = 1 - div p_h      (piecewise constant),
    c_h       = (gamma, r_tilde_h),
    r_h       = gamma r_tilde_h / c_h.

Coefficient integrals use a composite centroid rule on s x s congruent
subtriangles per element, whose nodes never fall on the half-integer jump
lines of the built-in discontinuous fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .coefficients import MatrixFieldSpec
from .errors import SolverFailure, ValidationError
from .spectral import SpectralInvariantMeasure
from .trig import CellQuadrature

try:
    import pyamg
except ImportError:  # pragma: no cover - Krylov path then unavailable
    pyamg = None

__all__ = [
    "PeriodicTriMesh",
    "VectorP1Function",
    "SparseSystem",
    "FEInvariantMeasure",
    "build_periodic_mesh",
    "assemble_mixed",
    "solve_invariant_fe",
    "effective_matrix",
    "invariant_error_l2",
]

# direct sparse factorization up to this many unknowns, Krylov beyond
# (the SuperLU fill on the bordered system grows superquadratically, so
# the switch point sits near N = 256 rather than the nominal N = 512)
_DIRECT_LIMIT = 2 * 260 * 260 + 2


def _triangle_subpoints(s: int) -> np.ndarray:
    """Centroids (xi, eta) of the s^2 congruent subtriangles of the
    reference triangle, weights area/s^2 each."""
    pts = []
    for i in range(s):
        for j in range(s - i):
            pts.append(((3 * i + 1) / (3 * s), (3 * j + 1) / (3 * s)))
    for i in range(s):
        for j in range(s - 1 - i):
            pts.append(((3 * i + 2) / (3 * s), (3 * j + 2) / (3 * s)))
    return np.array(pts)


@dataclass
class PeriodicTriMesh:
    """Uniform triangulation of the unit cell with periodically identified
    vertices; every square cell is split along the same diagonal, so each
    of the N^2 representative vertices has valence 6."""

    N: int
    vertices: np.ndarray      # (N^2, 2) representative coordinates
    triangles: np.ndarray     # (2 N^2, 3) periodic vertex ids
    coords: np.ndarray        # (2 N^2, 3, 2) unwrapped corner coordinates
    grads: np.ndarray         # (2 N^2, 3, 2) constant P1 basis gradients
    areas: np.ndarray         # (2 N^2,)

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def n_vertices(self) -> int:
        return self.N * self.N

    @property
    def n_triangles(self) -> int:
        return 2 * self.N * self.N

    def quad_points(self, s: int) -> tuple[np.ndarray, np.ndarray]:
        """Composite-rule points (ntri, s^2, 2) and scalar weight per point."""
        ref = _triangle_subpoints(s)
        x0 = self.coords[:, 0, :]
        e1 = self.coords[:, 1, :] - x0
        e2 = self.coords[:, 2, :] - x0
        pts = (x0[:, None, :] + ref[None, :, 0, None] * e1[:, None, :]
               + ref[None, :, 1, None] * e2[:, None, :])
        return pts, float(self.areas[0]) / (s * s)

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Triangle index containing each (wrapped) point."""
        pts = np.asarray(points, dtype=float)
        pts = pts - np.floor(pts)
        scaled = pts * self.N
        ij = np.minimum(scaled.astype(int), self.N - 1)
        frac = scaled - ij
        cell = ij[:, 0] * self.N + ij[:, 1]
        lower = frac[:, 1] <= frac[:, 0]   # below the (0,0)-(1,1) diagonal
        return 2 * cell + np.where(lower, 0, 1)


def build_periodic_mesh(N: int) -> PeriodicTriMesh:
    if N < 2:
        raise ValidationError("build_periodic_mesh needs N >= 2")
    h = 1.0 / N
    ii, jj = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    vertices = np.column_stack([ii.ravel() * h, jj.ravel() * h])

    i = ii.ravel()
    j = jj.ravel()
    ip, jp = (i + 1) % N, (j + 1) % N
    n00 = i * N + j
    n10 = ip * N + j
    n11 = ip * N + jp
    n01 = i * N + jp
    tri_lower = np.column_stack([n00, n10, n11])
    tri_upper = np.column_stack([n00, n11, n01])
    triangles = np.empty((2 * N * N, 3), dtype=np.int64)
    triangles[0::2] = tri_lower
    triangles[1::2] = tri_upper

    # unwrapped corner coordinates (cells touching the boundary extend to 1)
    p00 = np.column_stack([i * h, j * h])
    p10 = np.column_stack([(i + 1) * h, j * h])
    p11 = np.column_stack([(i + 1) * h, (j + 1) * h])
    p01 = np.column_stack([i * h, (j + 1) * h])
    coords = np.empty((2 * N * N, 3, 2))
    coords[0::2, 0], coords[0::2, 1], coords[0::2, 2] = p00, p10, p11
    coords[1::2, 0], coords[1::2, 1], coords[1::2, 2] = p00, p11, p01

    e1 = coords[:, 1, :] - coords[:, 0, :]
    e2 = coords[:, 2, :] - coords[:, 0, :]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    areas = 0.5 * np.abs(det)
    # grad lambda_1 = (e2y, -e2x)/det, grad lambda_2 = (-e1y, e1x)/det
    # (columns of the inverse of the edge matrix with rows e1, e2)
    grads = np.empty((len(det), 3, 2))
    grads[:, 1, 0] = e2[:, 1] / det
    grads[:, 1, 1] = -e2[:, 0] / det
    grads[:, 2, 0] = -e1[:, 1] / det
    grads[:, 2, 1] = e1[:, 0] / det
    grads[:, 0, :] = -grads[:, 1, :] - grads[:, 2, :]
    return PeriodicTriMesh(N=N, vertices=vertices, triangles=triangles,
                           coords=coords, grads=grads, areas=areas)


class VectorP1Function:
    """Periodic vector P1 field; dofs are component-major: dof = c*N^2 + node."""

    def __init__(self, mesh: PeriodicTriMesh, dofs: np.ndarray):
        self.mesh = mesh
        self.dofs = np.asarray(dofs, dtype=float)

    def component(self, c: int) -> np.ndarray:
        n = self.mesh.n_vertices
        return self.dofs[c * n:(c + 1) * n]

    def component_means(self) -> np.ndarray:
        """Exact means of the two components (every nodal basis function
        integrates to h^2)."""
        h2 = self.mesh.h ** 2
        return np.array([self.component(0).sum() * h2, self.component(1).sum() * h2])

    def gradients(self) -> np.ndarray:
        """Per-element Jacobians (ntri, 2, 2), entry [a, b] = d_b w_a."""
        mesh = self.mesh
        tri = mesh.triangles
        out = np.empty((mesh.n_triangles, 2, 2))
        for c in range(2):
            vals = self.component(c)[tri]               # (ntri, 3)
            out[:, c, :] = np.einsum("tn,tnb->tb", vals, mesh.grads)
        return out

    def divergence(self) -> np.ndarray:
        g = self.gradients()
        return g[:, 0, 0] + g[:, 1, 1]

    def curl(self) -> np.ndarray:
        g = self.gradients()
        return g[:, 0, 1] - g[:, 1, 0]


@dataclass
class SparseSystem:
    """Bordered sparse saddle system: Galerkin block plus two mean
    constraints (structurally symmetric bordering)."""

    matrix: scipy.sparse.csc_matrix
    rhs: np.ndarray
    n_constraints: int
    element_gA: np.ndarray     # per-element integral of gamma*A, (ntri, 2, 2)
    element_g: np.ndarray      # per-element integral of gamma, (ntri,)
    quad_order: int


def _element_coefficient_integrals(A: MatrixFieldSpec, mesh: PeriodicTriMesh,
                                   s: int):
    pts, w = mesh.quad_points(s)
    flat = pts.reshape(-1, 2)
    a11, a12, a22 = A.entry_values(flat)
    tr = a11 + a22
    fro2 = a11 * a11 + 2.0 * a12 * a12 + a22 * a22
    g = tr / fro2
    shape = (mesh.n_triangles, s * s)
    gA = np.empty((mesh.n_triangles, 2, 2))
    gA[:, 0, 0] = (g * a11).reshape(shape).sum(axis=1) * w
    gA[:, 0, 1] = (g * a12).reshape(shape).sum(axis=1) * w
    gA[:, 1, 0] = gA[:, 0, 1]
    gA[:, 1, 1] = (g * a22).reshape(shape).sum(axis=1) * w
    gbar = g.reshape(shape).sum(axis=1) * w
    return gA, gbar


def assemble_mixed(A: MatrixFieldSpec, mesh: PeriodicTriMesh,
                   quad_order: int = 4) -> SparseSystem:
    """Assemble the stabilized form; rows are test fields, columns trial."""
    if quad_order < 1:
        raise ValidationError("quad_order must be >= 1")
    gA, gbar = _element_coefficient_integrals(A, mesh, quad_order)
    grads = mesh.grads                      # (ntri, 3, 2)
    ntri, nvert = mesh.n_triangles, mesh.n_vertices

    # flux[e, c, nu] = (int_T gamma A)[c, :] . grad phi_nu
    flux = np.einsum("ecb,enb->ecn", gA, grads)
    # local test/trial layout alpha = c*3 + nu
    flux_loc = flux.reshape(ntri, 6)
    div_loc = np.transpose(grads, (0, 2, 1)).reshape(ntri, 6)   # d_c phi_nu
    curl_loc = np.empty((ntri, 6))
    curl_loc[:, 0:3] = grads[:, :, 1]       # component 1: +d2 phi
    curl_loc[:, 3:6] = -grads[:, :, 0]      # component 2: -d1 phi
    blocks = (flux_loc[:, :, None] * div_loc[:, None, :]
              + mesh.areas[:, None, None] * curl_loc[:, :, None] * curl_loc[:, None, :])

    gdof = np.empty((ntri, 6), dtype=np.int64)
    gdof[:, 0:3] = mesh.triangles
    gdof[:, 3:6] = mesh.triangles + nvert
    rows = np.repeat(gdof, 6, axis=1).ravel()
    cols = np.tile(gdof, (1, 6)).ravel()

    n = 2 * nvert
    rhs = np.zeros(n + 2)
    np.add.at(rhs, gdof.ravel(), flux_loc.ravel())

    # mean constraints: every nodal basis function integrates to h^2
    h2 = mesh.h ** 2
    cons_rows = np.concatenate([
        np.full(nvert, n), np.full(nvert, n + 1),        # constraint rows
        np.arange(nvert), np.arange(nvert, 2 * nvert),   # multiplier columns
    ])
    cons_cols = np.concatenate([
        np.arange(nvert), np.arange(nvert, 2 * nvert),
        np.full(nvert, n), np.full(nvert, n + 1),
    ])
    cons_vals = np.full(4 * nvert, h2)

    all_rows = np.concatenate([rows, cons_rows])
    all_cols = np.concatenate([cols, cons_cols])
    all_vals = np.concatenate([blocks.ravel(), cons_vals])
    matrix = scipy.sparse.coo_matrix((all_vals, (all_rows, all_cols)),
                                     shape=(n + 2, n + 2)).tocsc()
    return SparseSystem(matrix=matrix, rhs=rhs, n_constraints=2,
                        element_gA=gA, element_g=gbar, quad_order=quad_order)


@dataclass
class FEInvariantMeasure:
    """Discrete invariant measure from the mixed method."""

    p: VectorP1Function
    r_tilde: np.ndarray            # (ntri,) piecewise constant 1 - div p
    c: float
    spec: MatrixFieldSpec
    system: SparseSystem
    residual: float
    multipliers: np.ndarray

    @property
    def mesh(self) -> PeriodicTriMesh:
        return self.p.mesh

    def r(self, points) -> np.ndarray:
        """Pointwise weight gamma(y) r_tilde_h(y) / c_h."""
        pts = np.asarray(points, dtype=float)
        elems = self.mesh.locate(pts)
        gam = np.asarray(self.spec.gamma(pts), dtype=float)
        return gam * self.r_tilde[elems] / self.c

    __call__ = r

    @property
    def min_r(self) -> float:
        """Minimum of r_h over the assembly quadrature points."""
        s = self.system.quad_order
        pts, _ = self.mesh.quad_points(s)
        flat = pts.reshape(-1, 2)
        gam = np.asarray(self.spec.gamma(flat), dtype=float).reshape(len(self.r_tilde), -1)
        vals = gam * (self.r_tilde[:, None] / self.c)
        return float(vals.min())

    def integral_r_tilde(self) -> float:
        return float((self.mesh.areas * self.r_tilde).sum())

    def integral_r(self) -> float:
        return float((self.system.element_g * self.r_tilde).sum() / self.c)


def _component_laplacian_prec(mesh: PeriodicTriMesh):
    """Algebraic-multigrid V-cycle on the scalar periodic P1 Laplacian
    (one vertex pinned); the stabilized form is norm-equivalent to the
    vector Laplacian, so this preconditions both components."""
    loc = np.einsum("tnb,tmb->tnm", mesh.grads, mesh.grads) * mesh.areas[0]
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    L = scipy.sparse.coo_matrix((loc.ravel(), (rows, cols)),
                                shape=(mesh.n_vertices, mesh.n_vertices)).tolil()
    L[0, 0] += 1.0
    ml = pyamg.smoothed_aggregation_solver(L.tocsr(), max_coarse=200)
    return ml.aspreconditioner(cycle="V")


def _solve_bordered(system: SparseSystem, mesh: PeriodicTriMesh) -> np.ndarray:
    mat, rhs = system.matrix, system.rhs
    if mat.shape[0] <= _DIRECT_LIMIT or pyamg is None:
        try:
            lu = scipy.sparse.linalg.splu(mat)
        except RuntimeError as exc:
            raise SolverFailure(f"sparse factorization failed: {exc}") from exc
        return lu.solve(rhs)
    prec1 = _component_laplacian_prec(mesh)
    nv = mesh.n_vertices
    n = 2 * nv

    def pvec(x):
        return np.concatenate([prec1 @ x[:nv], prec1 @ x[nv:n], x[n:]])

    P = scipy.sparse.linalg.LinearOperator(mat.shape, pvec)
    x, info = scipy.sparse.linalg.gmres(mat.tocsr(), rhs, M=P, rtol=1e-13,
                                        atol=0.0, restart=150, maxiter=20)
    if info != 0:
        raise SolverFailure(f"preconditioned GMRES did not converge (info={info})")
    return x


def solve_invariant_fe(A: MatrixFieldSpec, N: int,
                       quad_order: int = 4) -> FEInvariantMeasure:
    """Build the mesh, assemble, solve, and normalize."""
    if A.delta <= 0:
        raise ValidationError("coefficient does not satisfy the Cordes condition")
    mesh = build_periodic_mesh(N)
    system = assemble_mixed(A, mesh, quad_order)
    mat, rhs = system.matrix, system.rhs
    x = _solve_bordered(system, mesh)
    if not np.all(np.isfinite(x)):
        raise SolverFailure("mixed solve produced non-finite values")
    rnorm = float(np.linalg.norm(mat @ x - rhs))
    scale = max(float(np.linalg.norm(rhs)), 1e-300)
    if rnorm > 1e-9 * scale:
        raise SolverFailure(
            f"mixed solve residual {rnorm:.3e} exceeds 1e-9 * ||rhs|| = {1e-9 * scale:.3e}")
    p = VectorP1Function(mesh, x[:-2])
    r_tilde = 1.0 - p.divergence()
    c = float((system.element_g * r_tilde).sum())
    if c <= 0:
        raise SolverFailure(
            f"normalization (gamma, r_tilde_h) = {c:.6e} is not positive")
    return FEInvariantMeasure(p=p, r_tilde=r_tilde, c=c, spec=A, system=system,
                              residual=rnorm / scale, multipliers=x[-2:])


def effective_matrix(measure, A: MatrixFieldSpec | None = None,
                     quad: CellQuadrature | None = None) -> np.ndarray:
    """Approximate effective matrix, the integral of r_h A.

    For finite element measures the per-element coefficient integrals of
    the assembly quadrature are reused, so the unit integral of r_h is
    inherited exactly.  For spectral measures the cell quadrature of the
    measure (or an override) is used and A must be supplied.
    """
    if isinstance(measure, FEInvariantMeasure):
        weights = measure.r_tilde / measure.c
        return np.einsum("e,eab->ab", weights, measure.system.element_gA)
    if isinstance(measure, SpectralInvariantMeasure):
        if A is None:
            raise ValidationError("effective_matrix needs A for a spectral measure")
        q = quad if quad is not None else measure.quad
        if q is measure.quad:
            r_nodes = measure.node_values
        else:
            r_nodes = measure.r_grid(q.axis, q.axis).ravel()
        a11, a12, a22 = A.entry_values(q.nodes)
        out = np.empty((2, 2))
        out[0, 0] = q.inner(r_nodes, a11)
        out[0, 1] = q.inner(r_nodes, a12)
        out[1, 0] = out[0, 1]
        out[1, 1] = q.inner(r_nodes, a22)
        return out
    raise ValidationError(f"unsupported measure type {type(measure)!r}")


def invariant_error_l2(measure: FEInvariantMeasure, r_exact,
                       s: int | None = None) -> float:
    """|| r_exact - r_h ||_{L2} by the composite centroid rule per element."""
    if s is None:
        s = max(measure.system.quad_order, 4)
    mesh = measure.mesh
    pts, w = mesh.quad_points(s)
    flat = pts.reshape(-1, 2)
    gam = np.asarray(measure.spec.gamma(flat), dtype=float)
    rh = gam.reshape(mesh.n_triangles, -1) * (measure.r_tilde[:, None] / measure.c)
    rx = np.asarray(r_exact(flat), dtype=float).reshape(mesh.n_triangles, -1)
    return math.sqrt(float(((rx - rh) ** 2).sum() * w))


def r_tilde_error_l2(measure: FEInvariantMeasure, r_tilde_exact,
                     s: int | None = None) -> float:
    """|| r_tilde_exact - r_tilde_h ||_{L2} with r_tilde_h evaluated from
    the stored element values."""
    if s is None:
        s = max(measure.system.quad_order, 4)
    mesh = measure.mesh
    pts, w = mesh.quad_points(s)
    flat = pts.reshape(-1, 2)
    rx = np.asarray(r_tilde_exact(flat), dtype=float).reshape(mesh.n_triangles, -1)
    diff = rx - measure.r_tilde[:, None]
    return math.sqrt(float((diff ** 2).sum() * w))
