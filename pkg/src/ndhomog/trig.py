"""Truncated real trigonometric basis of zero-mean periodic H^2 functions.

Modes are cos(2 pi k.y) and sin(2 pi k.y) for frequencies k on the half
lattice {k1 > 0} u {k1 = 0, k2 > 0} with |k|_inf <= K.  The constant mode
is excluded, so every member has zero mean, the basis is L2-orthogonal
with ||phi||^2 = 1/2, and Laplacian / gradient / Hessian act on the
coefficient array through exact factors.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError

__all__ = ["TrigSpace", "SpectralFunction", "CellQuadrature"]

_TWO_PI = 2.0 * math.pi
_CHUNK = 2048  # points per block in dense mode evaluation


def _half_lattice(K: int) -> np.ndarray:
    ks = [(k1, k2) for k1 in range(0, K + 1) for k2 in range(-K, K + 1)
          if (k1 > 0) or (k1 == 0 and k2 > 0)]
    return np.array(ks, dtype=np.int64)


class TrigSpace:
    """Spectral space of maximum frequency K; dim = (2K+1)^2 - 1."""

    def __init__(self, K: int):
        if K < 1:
            raise ValidationError("TrigSpace needs K >= 1")
        self.K = int(K)
        self.freqs = _half_lattice(self.K)          # (nf, 2)
        self.nfreq = self.freqs.shape[0]
        self.dim = 2 * self.nfreq
        # mode m = 2*q + t with frequency q and type t (0 = cos, 1 = sin)
        self.mode_freq = np.repeat(self.freqs, 2, axis=0)      # (dim, 2)
        self.mode_type = np.tile(np.array([0, 1]), self.nfreq)  # (dim,)
        k2 = (self.freqs ** 2).sum(axis=1).astype(float)
        self.freq_norm2 = k2                                    # |k|^2 per frequency
        self.lap_factor = -4.0 * math.pi ** 2 * np.repeat(k2, 2)  # Delta on modes

    def zeros(self) -> "SpectralFunction":
        return SpectralFunction(self, np.zeros(self.dim))

    def function(self, coeffs) -> "SpectralFunction":
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.dim,):
            raise ValidationError(f"coefficient array must have shape ({self.dim},)")
        return SpectralFunction(self, coeffs)

    def random_function(self, rng: np.random.Generator, scale: float = 1.0) -> "SpectralFunction":
        return SpectralFunction(self, scale * rng.standard_normal(self.dim))

    # -- dense mode-value evaluation (used by assembly and projections) ----

    def mode_values(self, points: np.ndarray) -> np.ndarray:
        """Matrix of basis values, shape (npts, dim)."""
        pts = np.asarray(points, dtype=float)
        phase = _TWO_PI * (pts @ self.freqs.T.astype(float))  # (npts, nfreq)
        out = np.empty((pts.shape[0], self.dim))
        out[:, 0::2] = np.cos(phase)
        out[:, 1::2] = np.sin(phase)
        return out

    def __repr__(self):
        return f"TrigSpace(K={self.K}, dim={self.dim})"


class SpectralFunction:
    """Member of a TrigSpace, stored as a real coefficient array."""

    __slots__ = ("space", "coeffs")

    def __init__(self, space: TrigSpace, coeffs: np.ndarray):
        self.space = space
        self.coeffs = np.asarray(coeffs, dtype=float)

    # -- algebra -----------------------------------------------------------

    def __add__(self, other: "SpectralFunction") -> "SpectralFunction":
        return SpectralFunction(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralFunction") -> "SpectralFunction":
        return SpectralFunction(self.space, self.coeffs - other.coeffs)

    def __mul__(self, s: float) -> "SpectralFunction":
        return SpectralFunction(self.space, self.coeffs * float(s))

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralFunction":
        return SpectralFunction(self.space, -self.coeffs)

    # -- exact differential operators on coefficients ----------------------

    def laplacian(self) -> "SpectralFunction":
        return SpectralFunction(self.space, self.coeffs * self.space.lap_factor)

    def partial(self, axis: int) -> "SpectralFunction":
        """First derivative: cos <-> sin with factors -/+ 2 pi k_axis."""
        sp = self.space
        k = sp.freqs[:, axis].astype(float)
        c = self.coeffs
        out = np.empty_like(c)
        # d/dx cos = -2 pi k sin ; d/dx sin = +2 pi k cos
        out[1::2] = -_TWO_PI * k * c[0::2]
        out[0::2] = _TWO_PI * k * c[1::2]
        return SpectralFunction(sp, out)

    def second_partial(self, a: int, b: int) -> "SpectralFunction":
        sp = self.space
        fac = -4.0 * math.pi ** 2 * sp.freqs[:, a] * sp.freqs[:, b]
        return SpectralFunction(sp, self.coeffs * np.repeat(fac.astype(float), 2))

    # -- norms (exact on the space) ----------------------------------------

    def l2_norm(self) -> float:
        return math.sqrt(0.5 * float(self.coeffs @ self.coeffs))

    def grad_l2_norm(self) -> float:
        w = 4.0 * math.pi ** 2 * np.repeat(self.space.freq_norm2, 2)
        return math.sqrt(0.5 * float(w @ (self.coeffs ** 2)))

    def lap_l2_norm(self) -> float:
        w = self.space.lap_factor ** 2
        return math.sqrt(0.5 * float(w @ (self.coeffs ** 2)))

    def hess_l2_norm(self) -> float:
        """Frobenius L2 norm of the Hessian; equals lap_l2_norm exactly."""
        sp = self.space
        kk = sp.freqs.astype(float)
        fro = (kk[:, 0] ** 2 + kk[:, 1] ** 2) ** 2  # |k k^T|_F^2 = |k|^4
        w = (4.0 * math.pi ** 2) ** 2 * np.repeat(fro, 2)
        return math.sqrt(0.5 * float(w @ (self.coeffs ** 2)))

    # -- evaluation ----------------------------------------------------------

    def eval(self, points: np.ndarray) -> np.ndarray:
        """Values at arbitrary points (P,2), chunked dense summation."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        if single:
            pts = pts[None, :]
        out = np.empty(pts.shape[0])
        for lo in range(0, pts.shape[0], _CHUNK):
            hi = min(lo + _CHUNK, pts.shape[0])
            out[lo:hi] = self.space.mode_values(pts[lo:hi]) @ self.coeffs
        return float(out[0]) if single else out

    __call__ = eval

    def eval_grid(self, y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
        """Values on the tensor grid y1 x y2, shape (len(y1), len(y2)).

        Uses the separable factorization cos(a+b) = c1 c2 - s1 s2 etc., so
        it sums exactly the same series as ``eval`` at much lower cost.
        """
        sp = self.space
        K = sp.K
        y1 = np.asarray(y1, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        # coefficient tables over (k1 in 0..K, k2 in -K..K)
        Pcc = np.zeros((K + 1, 2 * K + 1))
        Pcs = np.zeros_like(Pcc)
        Psc = np.zeros_like(Pcc)
        Pss = np.zeros_like(Pcc)
        k1 = sp.freqs[:, 0]
        k2 = sp.freqs[:, 1] + K
        cc = self.coeffs[0::2]
        cs = self.coeffs[1::2]
        # cos(2 pi (k1 y1 + k2 y2)) = c1 c2 - s1 s2 ; sin(...) = s1 c2 + c1 s2
        np.add.at(Pcc, (k1, k2), cc)
        np.add.at(Pss, (k1, k2), -cc)
        np.add.at(Psc, (k1, k2), cs)
        np.add.at(Pcs, (k1, k2), cs)
        a1 = _TWO_PI * np.outer(np.arange(K + 1), y1)            # (K+1, m1)
        a2 = _TWO_PI * np.outer(np.arange(-K, K + 1), y2)        # (2K+1, m2)
        C1, S1 = np.cos(a1), np.sin(a1)
        C2, S2 = np.cos(a2), np.sin(a2)
        return (C1.T @ (Pcc @ C2 + Pcs @ S2) + S1.T @ (Psc @ C2 + Pss @ S2))


class CellQuadrature:
    """Uniform midpoint tensor rule on the unit cell.

    Nodes {(i+1/2)/m} x {(j+1/2)/m}, weights 1/m^2.  Integrates
    trigonometric polynomials with |k|_inf < m exactly and never places a
    node on the half-integer jump lines when m is even.
    """

    def __init__(self, m: int):
        if m < 2:
            raise ValidationError("CellQuadrature needs m >= 2")
        self.m = int(m)
        self.axis = (np.arange(self.m) + 0.5) / self.m
        self.weight = 1.0 / (self.m * self.m)
        self._nodes: np.ndarray | None = None

    @property
    def nodes(self) -> np.ndarray:
        """All m^2 nodes, shape (m^2, 2), x-major ordering."""
        if self._nodes is None:
            xx, yy = np.meshgrid(self.axis, self.axis, indexing="ij")
            self._nodes = np.column_stack([xx.ravel(), yy.ravel()])
        return self._nodes

    @property
    def n_nodes(self) -> int:
        return self.m * self.m

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(values) * self.weight)

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.sum(u * v) * self.weight)

    def norm(self, values: np.ndarray) -> float:
        return math.sqrt(max(self.inner(values, values), 0.0))

    def sample(self, f) -> np.ndarray:
        """Node values of a callable or a preevaluated array."""
        if callable(f):
            vals = np.asarray(f(self.nodes), dtype=float)
        else:
            vals = np.asarray(f, dtype=float).ravel()
        if vals.shape != (self.n_nodes,):
            raise ValidationError(
                f"field evaluation yielded shape {vals.shape}, "
                f"expected ({self.n_nodes},)")
        return vals

    def grid(self, values: np.ndarray) -> np.ndarray:
        """Reshape flat node values to the (m, m) tensor grid."""
        return np.asarray(values).reshape(self.m, self.m)

    def __repr__(self):
        return f"CellQuadrature(m={self.m})"


def default_quadrature(space: TrigSpace, m: int | None = None) -> CellQuadrature:
    """Midpoint rule resolving all products of basis modes: m >= 4K, at
    least 128 so that discontinuous data is sampled densely."""
    if m is None:
        m = max(4 * space.K, 128)
    return CellQuadrature(m)
