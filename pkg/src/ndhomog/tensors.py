"""Corrector fields, the third-order homogenized tensor, and the
type-eps^2 / type-eps classification.

The corrector matrix V has entries v_kl = T(A, a_kl), the second corrector
X has entries chi_jkl = T(A, A e_j . grad v_kl), and the tensor is

    c_j^{kl} = (A e_j . grad v_kl, r),
    C_jkl    = c_j^{kl} + c_k^{jl} + c_l^{jk}.

A coefficient is classified type-eps^2 when max |C_jkl| falls below the
classification tolerance; the report always carries the magnitudes, never
a bare label.  For fields of the form A = C + aM and for 2D diagonal
fields, the structure identities (r = 1 + M:D^2 w, V = wM, and the
characterization of the tensor through the scalar solutions w_A, w_B)
provide independent cross-checks computed from the same spectral solves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import MatrixFieldSpec, cam_field, field_from_entries
from .errors import ValidationError
from .spectral import SpectralCell, SpectralInvariantMeasure
from .trig import CellQuadrature, SpectralFunction, TrigSpace

__all__ = [
    "CorrectorMatrix",
    "SecondCorrector",
    "ThirdOrderTensor",
    "corrector_matrix",
    "third_order_tensor",
    "classify",
    "second_corrector",
    "structure_check_CaM",
    "characterization_tensor",
    "StructureReport",
]

TYPE_EPS2 = "type-eps2"
TYPE_EPS = "type-eps"


@dataclass
class CorrectorMatrix:
    """Symmetric 2x2 matrix of cell solutions v_kl = T(A, a_kl); the
    off-diagonal entries share one object since A is symmetric."""

    entries: list  # 2x2 nested list of SpectralFunction
    cell: SpectralCell

    def __getitem__(self, kl) -> SpectralFunction:
        k, l = kl
        return self.entries[k][l]

    def grad_on_quad(self, k: int, l: int) -> tuple[np.ndarray, np.ndarray]:
        """Node values of grad v_kl on the cell quadrature grid."""
        quad = self.cell.quad
        v = self.entries[k][l]
        gx = v.partial(0).eval_grid(quad.axis, quad.axis).ravel()
        gy = v.partial(1).eval_grid(quad.axis, quad.axis).ravel()
        return gx, gy


@dataclass
class SecondCorrector:
    """2x2x2 array of cell solutions chi_jkl = T(A, A e_j . grad v_kl)."""

    entries: list  # [j][k][l] nested lists of SpectralFunction
    cell: SpectralCell

    def __getitem__(self, jkl) -> SpectralFunction:
        j, k, l = jkl
        return self.entries[j][k][l]


@dataclass
class ThirdOrderTensor:
    """c[j,k,l] = c_j^{kl}, its symmetrization C, and the thresholded
    classification."""

    c: np.ndarray
    C: np.ndarray
    classification: str
    tol: float
    residual_scale: float

    @property
    def max_abs_C(self) -> float:
        return float(np.abs(self.C).max())


def _solve_residual(cell: SpectralCell, x: np.ndarray, rhs: np.ndarray,
                    transposed: bool = False) -> float:
    mat = cell.G.T if transposed else cell.G
    scale = max(float(np.abs(rhs).max()), 1e-300)
    return float(np.abs(mat @ x - rhs).max()) / scale


def corrector_matrix(A: MatrixFieldSpec, space: TrigSpace,
                     quad: CellQuadrature | None = None,
                     cell: SpectralCell | None = None) -> CorrectorMatrix:
    """Solve the three distinct entry problems T(A, a_kl)."""
    cell = cell if cell is not None else SpectralCell(A, space, quad)
    a11, a12, a22 = cell.entry_nodes
    v11 = cell.corrector(a11)
    v12 = cell.corrector(a12)
    v22 = cell.corrector(a22)
    return CorrectorMatrix(entries=[[v11, v12], [v12, v22]], cell=cell)


def _flux_dot_grad(cell: SpectralCell, correctors: CorrectorMatrix,
                   j: int, k: int, l: int) -> np.ndarray:
    """Node values of A e_j . grad v_kl."""
    a11, a12, a22 = cell.entry_nodes
    gx, gy = correctors.grad_on_quad(k, l)
    if j == 0:
        return a11 * gx + a12 * gy
    return a12 * gx + a22 * gy


def third_order_tensor(A: MatrixFieldSpec, space: TrigSpace,
                       quad: CellQuadrature | None = None,
                       tol: float | None = None,
                       cell: SpectralCell | None = None,
                       correctors: CorrectorMatrix | None = None) -> ThirdOrderTensor:
    """Tensor entries by the defining inner products (A e_j . grad v_kl, r)."""
    if correctors is None:
        correctors = corrector_matrix(A, space, quad, cell=cell)
    cell = correctors.cell
    measure = cell.invariant_measure()
    c = np.empty((2, 2, 2))
    grads = {}
    for k in range(2):
        for l in range(2):
            key = (min(k, l), max(k, l))
            if key not in grads:
                grads[key] = correctors.grad_on_quad(*key)
    a11, a12, a22 = cell.entry_nodes
    for j in range(2):
        aj1, aj2 = (a11, a12) if j == 0 else (a12, a22)
        for k in range(2):
            for l in range(2):
                gx, gy = grads[(min(k, l), max(k, l))]
                c[j, k, l] = measure.inner(aj1 * gx + aj2 * gy)
    C = np.empty_like(c)
    for j in range(2):
        for k in range(2):
            for l in range(2):
                C[j, k, l] = c[j, k, l] + c[k, j, l] + c[l, k, j]
    # Galerkin residual floor of the corrector solves sets the smallest
    # magnitude that can be distinguished from zero.
    res = 0.0
    for k, l in ((0, 0), (0, 1), (1, 1)):
        v = correctors[k, l]
        fvals = cell.entry_nodes[{(0, 0): 0, (0, 1): 1, (1, 1): 2}[(k, l)]]
        measure_avg = measure.inner(fvals)
        rhs = -space.lap_factor * cell.project(cell.gamma_nodes * (fvals - measure_avg))
        res = max(res, _solve_residual(cell, v.coeffs, rhs))
    used_tol = tol if tol is not None else max(1e-8, 10.0 * res)
    label = TYPE_EPS2 if np.abs(C).max() <= used_tol else TYPE_EPS
    return ThirdOrderTensor(c=c, C=C, classification=label, tol=used_tol,
                            residual_scale=res)


@dataclass
class ClassificationReport:
    tensor: ThirdOrderTensor
    coefficient: str
    K: int

    @property
    def classification(self) -> str:
        return self.tensor.classification

    def to_text(self) -> str:
        t = self.tensor
        lines = [
            f"classification of coefficient {self.coefficient!r} (K={self.K})",
            f"  max |C_jkl|      = {t.max_abs_C:.6e}",
            f"  tolerance        = {t.tol:.6e}",
            f"  residual scale   = {t.residual_scale:.6e}",
            f"  classification   = {t.classification}",
        ]
        for j in range(2):
            for k in range(2):
                for l in range(2):
                    lines.append(f"  c_{j + 1}^({k + 1}{l + 1}) = {t.c[j, k, l]: .6e}")
        return "\n".join(lines)


def classify(A: MatrixFieldSpec, space: TrigSpace,
             quad: CellQuadrature | None = None,
             tol: float | None = None) -> ClassificationReport:
    tensor = third_order_tensor(A, space, quad, tol=tol)
    return ClassificationReport(tensor=tensor, coefficient=A.kind, K=space.K)


def second_corrector(A: MatrixFieldSpec, space: TrigSpace,
                     quad: CellQuadrature | None = None,
                     cell: SpectralCell | None = None,
                     correctors: CorrectorMatrix | None = None) -> SecondCorrector:
    """chi_jkl = T(A, A e_j . grad v_kl); chi_jkl and chi_jlk share one
    object because v_kl = v_lk."""
    if correctors is None:
        correctors = corrector_matrix(A, space, quad, cell=cell)
    cell = correctors.cell
    table: dict[tuple[int, int, int], SpectralFunction] = {}
    entries = [[[None, None], [None, None]], [[None, None], [None, None]]]
    for j in range(2):
        for k in range(2):
            for l in range(2):
                key = (j, min(k, l), max(k, l))
                if key not in table:
                    table[key] = cell.corrector(_flux_dot_grad(cell, correctors, j, *key[1:]))
                entries[j][k][l] = table[key]
    return SecondCorrector(entries=entries, cell=cell)


# ---------------------------------------------------------------------------
# structure identities for A = C + aM


@dataclass
class StructureReport:
    """Discrepancies of the structure identities for A = C + aM, measured
    in the quadrature L2 norm at the current truncation."""

    r_discrepancy: float        # || r - (1 + M : D^2 w) ||
    V_discrepancy: float        # max_kl || v_kl - w M_kl ||
    weak_residual: float        # || C : D^2 w + r a - (a, r) ||
    a_bar: float                # (a, r)
    w: SpectralFunction
    correctors: CorrectorMatrix


def structure_check_CaM(C, M, a, space: TrigSpace,
                        quad: CellQuadrature | None = None,
                        lam: float | None = None,
                        Lam: float | None = None) -> StructureReport:
    """Verify the invariant-measure and corrector identities of a C + aM
    field at the current truncation.

    Ellipticity bounds are sampled if not supplied; a field that is not
    uniformly elliptic on the sample grid is rejected.
    """
    C = np.asarray(C, dtype=float)
    M = np.asarray(M, dtype=float)
    if lam is None or Lam is None:
        probe = CellQuadrature(512)
        av = np.asarray(a(probe.nodes), dtype=float)
        e11 = C[0, 0] + av * M[0, 0]
        e12 = C[0, 1] + av * M[0, 1]
        e22 = C[1, 1] + av * M[1, 1]
        half = 0.5 * (e11 + e22)
        rad = np.sqrt(0.25 * (e11 - e22) ** 2 + e12 * e12)
        emin, emax = float((half - rad).min()), float((half + rad).max())
        if emin <= 0:
            raise ValidationError(
                f"C + aM is not elliptic: sampled lowest eigenvalue {emin:.3e}")
        lam = lam if lam is not None else emin * (1.0 - 1e-12)
        Lam = Lam if Lam is not None else emax * (1.0 + 1e-12)
    A = cam_field(C, M, a, lam=lam, Lam=Lam)
    cell = SpectralCell(A, space, quad)
    quad = cell.quad
    a_nodes = quad.sample(a)
    measure = cell.invariant_measure()
    w = cell.corrector(a_nodes)
    correctors = corrector_matrix(A, space, cell=cell)

    # (i) r = 1 + M : D^2 w
    md2w = (M[0, 0] * w.second_partial(0, 0) + M[1, 1] * w.second_partial(1, 1)
            + 2.0 * M[0, 1] * w.second_partial(0, 1))
    md2w_nodes = md2w.eval_grid(quad.axis, quad.axis).ravel()
    r_disc = quad.norm(measure.node_values - (1.0 + md2w_nodes))

    # (ii) V = w M, compared exactly on the shared coefficient arrays
    v_disc = 0.0
    for k in range(2):
        for l in range(2):
            diff = correctors[k, l] - M[k, l] * w
            v_disc = max(v_disc, diff.l2_norm())

    # (iii) -C : D^2 w = r a - (a, r)
    a_bar = measure.inner(a_nodes)
    cd2w = (C[0, 0] * w.second_partial(0, 0) + C[1, 1] * w.second_partial(1, 1)
            + 2.0 * C[0, 1] * w.second_partial(0, 1))
    resid_nodes = (cd2w.eval_grid(quad.axis, quad.axis).ravel()
                   + measure.node_values * a_nodes - a_bar)
    weak_res = quad.norm(resid_nodes)

    return StructureReport(r_discrepancy=r_disc, V_discrepancy=v_disc,
                           weak_residual=weak_res, a_bar=a_bar, w=w,
                           correctors=correctors)


# ---------------------------------------------------------------------------
# characterization of the tensor for diagonal 2D fields


def characterization_tensor(A: MatrixFieldSpec, space: TrigSpace,
                            quad: CellQuadrature | None = None):
    """Tensor of a diagonal field computed through the scalar solutions
    w_A = T(A, a) and w_B = T(B, b) with a = tr(A)/2, B = (1/a) A = I + bM,
    M = diag(1, -1).

    Returns (c, details) where c[j,k,l] matches the defining tensor in the
    limit of exact solves; ``details`` carries (a_bar, b_bar) and the two
    scalar products whose vanishing characterizes type-eps^2.
    """
    cellA = SpectralCell(A, space, quad)
    quad = cellA.quad
    a11, a12, a22 = cellA.entry_nodes
    if np.abs(a12).max() > 0:
        raise ValidationError("characterization_tensor needs a diagonal field")
    a_nodes = 0.5 * (a11 + a22)
    b_nodes_grid = (a11 - a22) / (a11 + a22)

    def b_fn(pts):
        e11, _, e22 = A.entry_values(pts)
        return (e11 - e22) / (e11 + e22)

    def b11(pts):
        return 1.0 + b_fn(pts)

    def b22(pts):
        return 1.0 - b_fn(pts)

    bmax = float(np.abs(b_nodes_grid).max())
    B = field_from_entries(
        kind=f"normalized:{A.kind}",
        entries=lambda pts: (b11(pts), np.zeros(pts.shape[0]), b22(pts)),
        lam=(1.0 - bmax) * (1.0 - 1e-12),
        Lam=(1.0 + bmax) * (1.0 + 1e-12),
    )
    cellB = SpectralCell(B, space, quad)
    w_A = cellA.corrector(a_nodes)
    w_B = cellB.corrector(b_nodes_grid)
    measure_B = cellB.invariant_measure()
    b_bar = measure_B.inner(b_nodes_grid)
    inv_a_rB = measure_B.inner(1.0 / a_nodes)
    a_bar = 1.0 / inv_a_rB

    def grid(fn: SpectralFunction) -> np.ndarray:
        return fn.eval_grid(quad.axis, quad.axis).ravel()

    # (d_2 w_A, d^2_11 w_B) and (d_1 w_A, d^2_22 w_B)
    p_s1 = quad.inner(grid(w_A.partial(1)), grid(w_B.second_partial(0, 0)))
    p_s2 = quad.inner(grid(w_A.partial(0)), grid(w_B.second_partial(1, 1)))
    M = np.diag([1.0, -1.0])
    c = np.empty((2, 2, 2))
    # The (k,l) factor is delta_kl + m_kl b_bar, matching the corrector
    # decomposition V = w_A (I + b_bar M) + w_B M: entries with k != l
    # vanish because v_kl = T(A, 0) = 0 for diagonal fields.
    for k in range(2):
        for l in range(2):
            factor = 2.0 * a_bar * ((1.0 if k == l else 0.0) + M[k, l] * b_bar)
            c[1, k, l] = factor * p_s1          # s = 1, sign +1, lower index 2
            c[0, k, l] = -factor * p_s2         # s = 2, sign -1, lower index 1
    details = {
        "a_bar": a_bar,
        "b_bar": b_bar,
        "criterion_d2wA_d11wB": p_s1,
        "criterion_d1wA_d22wB": p_s2,
        "r_A_check": None,
    }
    # cross-check r_A = (a_bar / a) r_B on the quadrature grid
    measure_A = cellA.invariant_measure()
    details["r_A_check"] = quad.norm(
        measure_A.node_values - (a_bar / a_nodes) * measure_B.node_values)
    return c, details
