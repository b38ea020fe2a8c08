"""Spectral Galerkin solution of the periodic cell problems.

Everything is posed on a :class:`~ndhomog.trig.TrigSpace` (a conforming
closed subspace of zero-mean periodic H^2) with the nonsymmetric bilinear
form

    b_mu(phi1, phi2) = (mu phi1 - gamma A : D^2 phi1, mu phi2 - Delta phi2)

integrated by the midpoint tensor rule.  One dense factorization of the
assembled matrix G, with G[i, j] = b_mu(phi_j, phi_i), serves the three
cell problems:

* the source problem for psi (solved with G^T, trial in the second slot),
  giving the invariant measure r = gamma (1 - Delta psi) / c,
* the nondivergence problem -A:D^2 v = f - (f, r) (solved with G),
* the double-divergence problem -D^2:(qA) = f via the auxiliary eta
  (solved with G^T) and q0 = -gamma Delta eta + (gamma, Delta eta) r.

Assembly loops over quadrature nodes in chunks; in serial mode identical
inputs produce identical outputs bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
from scipy.linalg.blas import dgemm

from .coefficients import MatrixFieldSpec
from .errors import SolverFailure, ValidationError
from .trig import CellQuadrature, SpectralFunction, TrigSpace, default_quadrature

__all__ = [
    "assemble_b_mu",
    "SpectralCell",
    "SpectralInvariantMeasure",
    "DoubleDivSolution",
    "solve_psi",
    "invariant_measure_spectral",
    "solve_nondiv",
    "solve_double_div",
    "project_onto_modes",
]

_FOUR_PI2 = 4.0 * math.pi ** 2
_CHUNK = 1024

# relative tolerance below which (f, r) or the mean of f counts as zero
COMPATIBILITY_RTOL = 1e-8


def _weighted_entries(A: MatrixFieldSpec, quad: CellQuadrature):
    """Node samples of gamma and of the three entries of gamma*A."""
    a11, a12, a22 = A.entry_values(quad.nodes)
    tr = a11 + a22
    fro2 = a11 * a11 + 2.0 * a12 * a12 + a22 * a22
    g = tr / fro2
    return g, (g * a11, g * a12, g * a22)


def _assemble(space: TrigSpace, quad: CellQuadrature, mu: float,
              g_entries) -> np.ndarray:
    """Chunked midpoint-rule assembly of G[i,j] = b_mu(phi_j, phi_i).

    Basis values at the tensor-grid nodes come from 1D angle tables
    (cos(a+b) = c1 c2 - s1 s2), which sums the same quadrature products
    as a direct per-node evaluation.
    """
    g11, g12, g22 = g_entries
    kk = space.mode_freq.astype(float)
    # quadratic form coefficients gamma k^T A k per mode, as one (B,3)@(3,dim)
    Q = np.vstack([kk[:, 0] ** 2, 2.0 * kk[:, 0] * kk[:, 1], kk[:, 1] ** 2])
    gmat = np.column_stack([g11, g12, g22])
    ang1 = 2.0 * math.pi * np.outer(quad.axis, space.freqs[:, 0].astype(float))
    ang2 = 2.0 * math.pi * np.outer(quad.axis, space.freqs[:, 1].astype(float))
    C1, S1 = np.cos(ang1), np.sin(ang1)
    C2, S2 = np.cos(ang2), np.sin(ang2)
    m = quad.m
    G = np.zeros((space.dim, space.dim), order="F")
    phi = np.empty((_CHUNK, space.dim))
    for lo in range(0, quad.n_nodes, _CHUNK):
        hi = min(lo + _CHUNK, quad.n_nodes)
        idx = np.arange(lo, hi)
        ix, iy = idx // m, idx % m
        B = hi - lo
        ph = phi[:B]
        ph[:, 0::2] = C1[ix] * C2[iy] - S1[ix] * S2[iy]
        ph[:, 1::2] = S1[ix] * C2[iy] + C1[ix] * S2[iy]
        trial = gmat[lo:hi] @ Q
        trial *= _FOUR_PI2
        trial += mu
        trial *= ph                            # mu phi - gamma A : D^2 phi
        # G += ph.T @ trial, accumulated in place
        G = dgemm(1.0, ph, trial, beta=1.0, c=G, trans_a=1, overwrite_c=1)
    # test factor (mu - Delta) acts as a row scaling, applied once at the end
    G *= (mu - space.lap_factor)[:, None]
    G *= quad.weight
    return G


def assemble_b_mu(A: MatrixFieldSpec, mu: float, space: TrigSpace,
                  quad: CellQuadrature) -> np.ndarray:
    """Dense Galerkin matrix of b_mu; row = test function, column = trial
    (first slot of the form)."""
    if mu < 0:
        raise ValidationError("assemble_b_mu needs mu >= 0")
    _, g_entries = _weighted_entries(A, quad)
    return _assemble(space, quad, float(mu), g_entries)


def project_onto_modes(values: np.ndarray, space: TrigSpace,
                       quad: CellQuadrature) -> np.ndarray:
    """Quadrature inner products <values, phi_i> for every basis mode.

    Exploits the tensor-product structure of the midpoint grid, summing
    exactly the same products as a dense node loop.
    """
    K = space.K
    grid = quad.grid(values)
    a1 = 2.0 * math.pi * np.outer(np.arange(K + 1), quad.axis)
    a2 = 2.0 * math.pi * np.outer(np.arange(-K, K + 1), quad.axis)
    C1, S1 = np.cos(a1), np.sin(a1)
    C2, S2 = np.cos(a2), np.sin(a2)
    gC2, gS2 = grid @ C2.T, grid @ S2.T
    Tcc = C1 @ gC2
    Tss = S1 @ gS2
    Tsc = S1 @ gC2
    Tcs = C1 @ gS2
    i1 = space.freqs[:, 0]
    i2 = space.freqs[:, 1] + K
    out = np.empty(space.dim)
    out[0::2] = Tcc[i1, i2] - Tss[i1, i2]
    out[1::2] = Tsc[i1, i2] + Tcs[i1, i2]
    return out * quad.weight


@dataclass
class SpectralInvariantMeasure:
    """Invariant measure produced from the discrete psi: r_tilde = 1 -
    Delta psi (zero-mean correction is exact), c = (gamma, r_tilde), and
    the pointwise weight r = gamma r_tilde / c."""

    psi: SpectralFunction
    c: float
    _gamma_fn: Callable[[np.ndarray], np.ndarray]
    node_values: np.ndarray        # r at the quadrature nodes
    quad: CellQuadrature

    def r_tilde(self, points) -> np.ndarray:
        return 1.0 - self.psi.laplacian().eval(points)

    def r(self, points) -> np.ndarray:
        return self._gamma_fn(points) * self.r_tilde(points) / self.c

    __call__ = r

    def r_grid(self, y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
        """r on a tensor grid, shape (len(y1), len(y2)); same series as
        ``r`` summed through the fast grid evaluator."""
        lap = self.psi.laplacian().eval_grid(y1, y2)
        xx, yy = np.meshgrid(y1, y2, indexing="ij")
        gam = self._gamma_fn(np.column_stack([xx.ravel(), yy.ravel()]))
        return gam.reshape(lap.shape) * (1.0 - lap) / self.c

    @property
    def min_r(self) -> float:
        return float(self.node_values.min())

    def inner(self, values: np.ndarray) -> float:
        """(f, r) by quadrature for node values f."""
        return self.quad.inner(values, self.node_values)


@dataclass
class DoubleDivSolution:
    """Mean-zero solution q0 of the double-divergence problem, exposed as
    a pointwise evaluator together with the auxiliary potential eta."""

    eta: SpectralFunction
    measure: SpectralInvariantMeasure
    _gamma_fn: Callable[[np.ndarray], np.ndarray]
    gamma_lap_eta: float           # (gamma, Delta eta) by quadrature
    node_values: np.ndarray

    def eval(self, points) -> np.ndarray:
        lap = self.eta.laplacian().eval(points)
        return -self._gamma_fn(points) * lap + self.gamma_lap_eta * self.measure.r(points)

    __call__ = eval

    def l2_norm(self) -> float:
        return self.measure.quad.norm(self.node_values)


class SpectralCell:
    """Shared assembly/factorization context for one coefficient field.

    All cell problems for the same (A, space, quad) reuse the single LU
    factorization of G (transposed solves handle the second-slot
    problems).  Instances are immutable after construction apart from
    internal caches.
    """

    def __init__(self, A: MatrixFieldSpec, space: TrigSpace,
                 quad: CellQuadrature | None = None):
        if A.delta <= 0:
            raise ValidationError("coefficient does not satisfy the Cordes condition")
        self.A = A
        self.space = space
        self.quad = quad if quad is not None else default_quadrature(space)
        self.gamma_nodes, self.g_entries = _weighted_entries(A, self.quad)
        a11, a12, a22 = A.entry_values(self.quad.nodes)
        self.entry_nodes = (a11, a12, a22)
        self._G: np.ndarray | None = None
        self._lu = None
        self._psi: SpectralFunction | None = None
        self._measure: SpectralInvariantMeasure | None = None

    # -- linear algebra ------------------------------------------------------

    @property
    def G(self) -> np.ndarray:
        if self._G is None:
            self._G = _assemble(self.space, self.quad, 0.0, self.g_entries)
        return self._G

    def _solve(self, rhs: np.ndarray, transposed: bool) -> np.ndarray:
        if self._lu is None:
            try:
                self._lu = scipy.linalg.lu_factor(self.G)
            except scipy.linalg.LinAlgError as exc:
                raise SolverFailure(f"cell system factorization failed: {exc}") from exc
        x = scipy.linalg.lu_solve(self._lu, rhs, trans=1 if transposed else 0)
        if not np.all(np.isfinite(x)):
            raise SolverFailure("cell solve produced non-finite values")
        mat = self.G.T if transposed else self.G
        resid = np.abs(mat @ x - rhs).max()
        scale = max(np.abs(rhs).max(), 1e-300)
        if resid > 1e-6 * max(scale, np.abs(x).max()):
            raise SolverFailure(
                f"cell solve residual {resid:.3e} too large for scale {scale:.3e}")
        return x

    def project(self, f) -> np.ndarray:
        """<f, phi_i> for all modes; f is a callable or node-value array."""
        return project_onto_modes(self.quad.sample(f), self.space, self.quad)

    def nondiv_test_products(self, values: np.ndarray) -> np.ndarray:
        """<values, -A:D^2 phi_i> for all modes (weak double-divergence
        pairing of a node field with the operator applied to the basis)."""
        a11, a12, a22 = self.entry_nodes
        kk = self.space.mode_freq.astype(float)
        p11 = project_onto_modes(values * a11, self.space, self.quad)
        p12 = project_onto_modes(values * a12, self.space, self.quad)
        p22 = project_onto_modes(values * a22, self.space, self.quad)
        return _FOUR_PI2 * (kk[:, 0] ** 2 * p11 + 2.0 * kk[:, 0] * kk[:, 1] * p12
                            + kk[:, 1] ** 2 * p22)

    def rhs_psi(self) -> np.ndarray:
        """Load vector integral of (gamma A) : D^2 phi_i."""
        g11, g12, g22 = self.g_entries
        kk = self.space.mode_freq.astype(float)
        p11 = project_onto_modes(g11, self.space, self.quad)
        p12 = project_onto_modes(g12, self.space, self.quad)
        p22 = project_onto_modes(g22, self.space, self.quad)
        return -_FOUR_PI2 * (kk[:, 0] ** 2 * p11 + 2.0 * kk[:, 0] * kk[:, 1] * p12
                             + kk[:, 1] ** 2 * p22)

    # -- cell problems -------------------------------------------------------

    def psi(self) -> SpectralFunction:
        if self._psi is None:
            self._psi = SpectralFunction(self.space, self._solve(self.rhs_psi(), transposed=True))
        return self._psi

    def gamma_fn(self, points) -> np.ndarray:
        return np.asarray(self.A.gamma(points), dtype=float)

    def invariant_measure(self) -> SpectralInvariantMeasure:
        if self._measure is None:
            psi = self.psi()
            lap = psi.laplacian()
            r_tilde_nodes = 1.0 - lap.eval_grid(self.quad.axis, self.quad.axis).ravel()
            c = self.quad.inner(self.gamma_nodes, r_tilde_nodes)
            if c <= 0:
                raise SolverFailure(
                    f"normalization (gamma, r_tilde) = {c:.6e} is not positive; "
                    "the discrete invariant measure cannot be normalized")
            r_nodes = self.gamma_nodes * r_tilde_nodes / c
            self._measure = SpectralInvariantMeasure(
                psi=psi, c=c, _gamma_fn=self.gamma_fn,
                node_values=r_nodes, quad=self.quad)
        return self._measure

    def nondiv_solve(self, f, project_compatibility: bool = False) -> SpectralFunction:
        """Mean-zero v with -A:D^2 v = f - (f, r) in the Galerkin sense.

        With the flag off, f must already satisfy (f, r) = 0 up to
        quadrature noise; with it on, the r-average is removed first,
        which realizes the corrector operator T(A, f).
        """
        fvals = self.quad.sample(f)
        measure = self.invariant_measure()
        fr = measure.inner(fvals)
        fnorm = self.quad.norm(fvals)
        if project_compatibility:
            fvals = fvals - fr
        elif abs(fr) > COMPATIBILITY_RTOL * max(fnorm, 1e-300):
            raise ValidationError(
                f"nondivergence problem is incompatible: (f, r) = {fr:.6e} "
                f"exceeds {COMPATIBILITY_RTOL:.0e} * ||f|| = {COMPATIBILITY_RTOL * fnorm:.6e}")
        rhs = -self.space.lap_factor * self.project(self.gamma_nodes * fvals)
        return SpectralFunction(self.space, self._solve(rhs, transposed=False))

    def double_div_solve(self, f) -> DoubleDivSolution:
        """Mean-zero q0 with -D^2:(q0 A) = f in the weak sense; requires
        f to have zero mean."""
        fvals = self.quad.sample(f)
        mean = self.quad.integrate(fvals)
        fnorm = self.quad.norm(fvals)
        if abs(mean) > COMPATIBILITY_RTOL * max(fnorm, 1e-300):
            raise ValidationError(
                f"double-divergence problem needs a zero-mean source; "
                f"measured mean {mean:.6e} for ||f|| = {fnorm:.6e}")
        eta = SpectralFunction(self.space, self._solve(self.project(fvals), transposed=True))
        measure = self.invariant_measure()
        lap_nodes = eta.laplacian().eval_grid(self.quad.axis, self.quad.axis).ravel()
        gle = self.quad.inner(self.gamma_nodes, lap_nodes)
        node_values = -self.gamma_nodes * lap_nodes + gle * measure.node_values
        return DoubleDivSolution(eta=eta, measure=measure, _gamma_fn=self.gamma_fn,
                                 gamma_lap_eta=gle, node_values=node_values)

    def corrector(self, f) -> SpectralFunction:
        """T(A, f): the mean-zero solution of -A:D^2 w = f - (f, r)."""
        return self.nondiv_solve(f, project_compatibility=True)


# ---------------------------------------------------------------------------
# functional facade


def solve_psi(A: MatrixFieldSpec, space: TrigSpace,
              quad: CellQuadrature | None = None) -> SpectralFunction:
    return SpectralCell(A, space, quad).psi()


def invariant_measure_spectral(A: MatrixFieldSpec, space: TrigSpace,
                               quad: CellQuadrature | None = None) -> SpectralInvariantMeasure:
    return SpectralCell(A, space, quad).invariant_measure()


def solve_nondiv(A: MatrixFieldSpec, f, space: TrigSpace,
                 quad: CellQuadrature | None = None,
                 project_compatibility: bool = False) -> SpectralFunction:
    return SpectralCell(A, space, quad).nondiv_solve(f, project_compatibility)


def solve_double_div(A: MatrixFieldSpec, f, space: TrigSpace,
                     quad: CellQuadrature | None = None) -> DoubleDivSolution:
    return SpectralCell(A, space, quad).double_div_solve(f)
