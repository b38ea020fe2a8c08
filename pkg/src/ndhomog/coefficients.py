"""Periodic 2x2 coefficient fields and the Cordes condition.

A coefficient field is a Y-periodic (Y = unit cell), symmetric, uniformly
elliptic 2x2 matrix function of y.  This module provides:

* ``MatrixFieldSpec`` -- an evaluable field together with certified
  ellipticity bounds ``lam <= eig(A) <= Lam`` and a certified Cordes
  constant ``delta``,
* the Cordes scaling ``gamma = tr(A)/|A|^2`` and a sampling-based check of
  the Cordes condition,
* a registry of built-in fields (including the discontinuous benchmark
  ``paper-sec5`` with its known invariant measure and effective matrix),
* a JSON descriptor loader for piecewise-constant-on-grid fields.

Evaluators are pure functions of the point and are safe to call from
multiple workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ValidationError

__all__ = [
    "MatrixFieldSpec",
    "CordesReport",
    "ReferenceSolution",
    "evaluate",
    "gamma",
    "cordes_check",
    "reference_solution",
    "builtin_field",
    "builtin_names",
    "load_coefficient",
    "field_from_entries",
    "cam_field",
    "grid_field",
]

EntryFn = Callable[[np.ndarray], np.ndarray]


def _wrap(points: np.ndarray) -> np.ndarray:
    """Map points into the unit cell [0,1)^2."""
    return points - np.floor(points)


def _as_points(y) -> tuple[np.ndarray, bool]:
    pts = np.asarray(y, dtype=float)
    if pts.ndim == 1:
        return pts[None, :], True
    return pts, False


@dataclass(frozen=True)
class ReferenceSolution:
    """Closed-form companions of a built-in field: the invariant measure
    ``r``, the cell solution ``w`` with source ``a`` (for C+aM fields),
    the exact effective matrix and the exact value of (a, r)."""

    r: Callable[[np.ndarray], np.ndarray]
    w: Callable[[np.ndarray], np.ndarray]
    A_bar: np.ndarray
    a_bar: float


@dataclass(frozen=True)
class MatrixFieldSpec:
    """Evaluable Y-periodic symmetric 2x2 coefficient field.

    ``entries`` maps wrapped points (P,2) to the triple (a11, a12, a22),
    each of shape (P,).  ``lam``/``Lam`` are certified ellipticity bounds
    (not necessarily tight).  ``delta`` is a certified Cordes constant;
    in 2D ``lam/Lam`` always works and is the default.
    """

    kind: str
    entries: EntryFn
    lam: float
    Lam: float
    delta: float
    cam: tuple[np.ndarray, np.ndarray, Callable] | None = None
    reference: ReferenceSolution | None = None

    def entry_values(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pts = _wrap(np.asarray(points, dtype=float))
        a11, a12, a22 = self.entries(pts)
        return np.asarray(a11, float), np.asarray(a12, float), np.asarray(a22, float)

    def evaluate(self, y) -> np.ndarray:
        """Symmetric matrix at one point (2,2) or a batch (P,2,2).

        Both off-diagonal slots are filled from the same value, so the
        result is symmetric exactly.
        """
        pts, single = _as_points(y)
        a11, a12, a22 = self.entry_values(pts)
        out = np.empty((pts.shape[0], 2, 2))
        out[:, 0, 0] = a11
        out[:, 0, 1] = a12
        out[:, 1, 0] = a12
        out[:, 1, 1] = a22
        return out[0] if single else out

    def gamma(self, y) -> np.ndarray | float:
        """Cordes scaling tr(A)/|A|^2 at y."""
        pts, single = _as_points(y)
        a11, a12, a22 = self.entry_values(pts)
        tr = a11 + a22
        fro2 = a11 * a11 + 2.0 * a12 * a12 + a22 * a22
        g = tr / fro2
        return float(g[0]) if single else g

    @property
    def C_delta(self) -> float:
        """Coercivity constant (1 - sqrt(1-delta))^{-1} for the certified delta."""
        return 1.0 / (1.0 - math.sqrt(1.0 - self.delta))


def evaluate(spec: MatrixFieldSpec, y) -> np.ndarray:
    return spec.evaluate(y)


def gamma(spec: MatrixFieldSpec, y):
    return spec.gamma(y)


@dataclass(frozen=True)
class CordesReport:
    """Sampled Cordes check: delta_hat is the minimum of tr(A)^2/|A|^2 - 1
    over the sample grid (n=2)."""

    delta_hat: float
    holds: bool
    n_samples: int
    gamma_bounds: tuple[float, float]


def cordes_check(spec: MatrixFieldSpec, resolution: int = 1024) -> CordesReport:
    """Sample tr(A)^2/|A|^2 - 1 on a midpoint grid of ``resolution`` points
    per axis.  Midpoint nodes never lie on the half-integer jump lines of
    the built-in discontinuous fields.  A violated condition yields a
    report with ``holds=False``, not an error.
    """
    if resolution < 2:
        raise ValidationError("cordes_check needs resolution >= 2")
    ax = (np.arange(resolution) + 0.5) / resolution
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    a11, a12, a22 = spec.entry_values(pts)
    tr = a11 + a22
    fro2 = a11 * a11 + 2.0 * a12 * a12 + a22 * a22
    ratio = tr * tr / fro2 - 1.0
    g = tr / fro2
    delta_hat = float(ratio.min())
    return CordesReport(
        delta_hat=delta_hat,
        holds=delta_hat > 0.0,
        n_samples=resolution,
        gamma_bounds=(float(g.min()), float(g.max())),
    )


# ---------------------------------------------------------------------------
# constructors


def field_from_entries(
    kind: str,
    entries: EntryFn,
    lam: float,
    Lam: float,
    delta: float | None = None,
    cam=None,
    reference=None,
) -> MatrixFieldSpec:
    if not (0.0 < lam <= Lam):
        raise ValidationError(f"need 0 < lam <= Lam, got lam={lam}, Lam={Lam}")
    if delta is None:
        delta = lam / Lam  # always valid in 2D
    if not (0.0 < delta <= 1.0):
        raise ValidationError(f"certified delta must lie in (0,1], got {delta}")
    return MatrixFieldSpec(kind=kind, entries=entries, lam=lam, Lam=Lam,
                           delta=delta, cam=cam, reference=reference)


def constant_field(A, kind: str | None = None) -> MatrixFieldSpec:
    """Constant SPD field.  Carries the trivial reference r=1, w=0."""
    A = np.asarray(A, dtype=float)
    if A.shape != (2, 2) or abs(A[0, 1] - A[1, 0]) > 0:
        raise ValidationError("constant_field expects a symmetric 2x2 matrix")
    ev = np.linalg.eigvalsh(A)
    if ev[0] <= 0:
        raise ValidationError("constant_field expects a positive definite matrix")
    a11, a12, a22 = float(A[0, 0]), float(A[0, 1]), float(A[1, 1])

    def entries(pts):
        n = pts.shape[0]
        return (np.full(n, a11), np.full(n, a12), np.full(n, a22))

    ref = ReferenceSolution(
        r=lambda pts: np.ones(np.asarray(pts).shape[0]),
        w=lambda pts: np.zeros(np.asarray(pts).shape[0]),
        A_bar=A.copy(),
        a_bar=0.0,
    )
    lam, Lam = float(ev[0]), float(ev[1])
    return field_from_entries(kind or "constant", entries, lam, Lam,
                              cam=(A.copy(), np.zeros((2, 2)), lambda pts: np.zeros(np.asarray(pts).shape[0])),
                              reference=ref)


def cam_field(
    C,
    M,
    a: Callable[[np.ndarray], np.ndarray],
    lam: float,
    Lam: float,
    kind: str = "c-plus-aM",
    delta: float | None = None,
    reference: ReferenceSolution | None = None,
) -> MatrixFieldSpec:
    """Field of the form A(y) = C + a(y) M with constant symmetric C, M."""
    C = np.asarray(C, dtype=float)
    M = np.asarray(M, dtype=float)
    for name, mat in (("C", C), ("M", M)):
        if mat.shape != (2, 2) or abs(mat[0, 1] - mat[1, 0]) > 0:
            raise ValidationError(f"{name} must be a symmetric 2x2 matrix")

    def entries(pts):
        av = np.asarray(a(pts), dtype=float)
        return (C[0, 0] + av * M[0, 0], C[0, 1] + av * M[0, 1], C[1, 1] + av * M[1, 1])

    return field_from_entries(kind, entries, lam, Lam, delta=delta,
                              cam=(C, M, a), reference=reference)


def diagonal_field(
    a11: Callable[[np.ndarray], np.ndarray],
    a22: Callable[[np.ndarray], np.ndarray],
    lam: float,
    Lam: float,
    kind: str = "diagonal",
    delta: float | None = None,
) -> MatrixFieldSpec:
    """Diagonal field diag(a11(y), a22(y)) from two scalar evaluators."""

    def entries(pts):
        v11 = np.asarray(a11(pts), dtype=float)
        return (v11, np.zeros_like(v11), np.asarray(a22(pts), dtype=float))

    return field_from_entries(kind, entries, lam, Lam, delta=delta)


def grid_field(cells, lam: float | None = None, Lam: float | None = None,
               kind: str = "grid") -> MatrixFieldSpec:
    """Piecewise-constant field on an N x N subdivision of the unit cell.

    ``cells`` is a row-major list/array of (a11, a12, a22) triples, cell
    (i, j) covering [i/N,(i+1)/N) x [j/N,(j+1)/N) at index i*N + j.  Every
    cell matrix must be SPD; caller-supplied bounds are verified against
    the exact cell eigenvalues.
    """
    table = np.asarray(cells, dtype=float)
    n2 = table.shape[0]
    N = int(round(math.sqrt(n2)))
    if N * N != n2 or table.ndim != 2 or table.shape[1] != 3:
        raise ValidationError("cells must be an (N^2, 3) row-major table")
    a11, a12, a22 = table[:, 0], table[:, 1], table[:, 2]
    if np.any(a11 <= 0) or np.any(a11 * a22 - a12 * a12 <= 0):
        raise ValidationError("grid_field: some cell matrix is not SPD")
    # exact eigenvalue range of the table
    half_tr = 0.5 * (a11 + a22)
    rad = np.sqrt(0.25 * (a11 - a22) ** 2 + a12 * a12)
    emin, emax = float((half_tr - rad).min()), float((half_tr + rad).max())
    if lam is None:
        lam = emin
    if Lam is None:
        Lam = emax
    tol = 1e-12 * max(1.0, abs(Lam))
    if emin < lam - tol or emax > Lam + tol:
        raise ValidationError(
            f"grid_field: supplied bounds [{lam}, {Lam}] do not contain the "
            f"cell eigenvalue range [{emin}, {emax}]")

    def entries(pts):
        idx = np.minimum((pts * N).astype(int), N - 1)
        flat = idx[:, 0] * N + idx[:, 1]
        return (a11[flat], a12[flat], a22[flat])

    return field_from_entries(kind, entries, float(lam), float(Lam))


# ---------------------------------------------------------------------------
# the discontinuous benchmark field ("paper-sec5" in the registry)

_PI2 = math.pi * math.pi


def _omega(t: np.ndarray) -> np.ndarray:
    # square wave sign(sin(2 pi t)); +1 on the half-integer lines by convention
    tau = t - np.floor(t)
    return np.where(tau <= 0.5, 1.0, -1.0)


def _saw(t: np.ndarray) -> np.ndarray:
    return 1.0 - 2.0 * (t - np.floor(t))


def _theta(t: np.ndarray) -> np.ndarray:
    s = _saw(t)
    return s * (1.0 - _omega(t) * s)


def sec5_scalar(pts: np.ndarray) -> np.ndarray:
    """The discontinuous scalar a(y) driving the benchmark field."""
    y1, y2 = pts[:, 0], pts[:, 1]
    s2 = np.sin(2.0 * math.pi * y2)
    om = _omega(y1)
    return (3.0 - 2.0 * om * s2) / (8.0 + (_PI2 * _theta(y1) - 2.0 * om) * s2)


def _sec5_r(pts: np.ndarray) -> np.ndarray:
    pts = _wrap(np.asarray(pts, dtype=float))
    y1, y2 = pts[:, 0], pts[:, 1]
    s2 = np.sin(2.0 * math.pi * y2)
    return 1.0 + 0.125 * (_PI2 * _theta(y1) - 2.0 * _omega(y1)) * s2


def _sec5_w(pts: np.ndarray) -> np.ndarray:
    pts = _wrap(np.asarray(pts, dtype=float))
    y1, y2 = pts[:, 0], pts[:, 1]
    return -_theta(y1) * np.sin(2.0 * math.pi * y2) / 32.0


def _sec5_field() -> MatrixFieldSpec:
    C = np.diag([1.0, 0.0])
    M = np.diag([-1.0, 1.0])
    ref = ReferenceSolution(
        r=_sec5_r,
        w=_sec5_w,
        A_bar=np.diag([0.625, 0.375]),
        a_bar=0.375,
    )
    # a in [1/10, 5/6], so eigenvalues of diag(1-a, a) lie in [1/10, 9/10]
    return cam_field(C, M, sec5_scalar, lam=0.1, Lam=0.9, kind="paper-sec5",
                     delta=1.0 / 9.0, reference=ref)


# ---------------------------------------------------------------------------
# trigonometric polynomials and the configurable C+aM family


def trig_poly(cos_terms=(), sin_terms=()) -> Callable[[np.ndarray], np.ndarray]:
    """Real trigonometric polynomial sum_j amp*cos(2 pi k.y) + amp*sin(2 pi k.y).

    Terms are (k1, k2, amp) triples."""
    cos_terms = [(int(k1), int(k2), float(a)) for k1, k2, a in cos_terms]
    sin_terms = [(int(k1), int(k2), float(a)) for k1, k2, a in sin_terms]

    def f(pts):
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[0])
        for k1, k2, amp in cos_terms:
            out += amp * np.cos(2.0 * math.pi * (k1 * pts[:, 0] + k2 * pts[:, 1]))
        for k1, k2, amp in sin_terms:
            out += amp * np.sin(2.0 * math.pi * (k1 * pts[:, 0] + k2 * pts[:, 1]))
        return out

    f.amplitude = sum(abs(a) for _, _, a in cos_terms) + sum(abs(a) for _, _, a in sin_terms)
    return f


_CAM_DEFAULTS = {
    "C": [[1.0, 0.0], [0.0, 1.0]],
    "M": [[1.0, 0.0], [0.0, -1.0]],
    "a_cos": [],
    "a_sin": [[1, 1, 0.3]],
}


def _cam_generic(params: dict | None = None) -> MatrixFieldSpec:
    p = dict(_CAM_DEFAULTS)
    if params:
        p.update(params)
    C = np.asarray(p["C"], dtype=float)
    M = np.asarray(p["M"], dtype=float)
    a = trig_poly(p.get("a_cos", ()), p.get("a_sin", ()))
    # conservative ellipticity bounds: eig(C) -/+ |a|_inf * rho(M)
    evC = np.linalg.eigvalsh(C)
    rhoM = float(np.abs(np.linalg.eigvalsh(M)).max())
    lam = float(evC[0]) - a.amplitude * rhoM
    Lam = float(evC[1]) + a.amplitude * rhoM
    if lam <= 0:
        raise ValidationError(
            f"ca-m-generic: conservative lower eigenvalue bound {lam} <= 0; "
            "reduce the amplitude of a or strengthen C")
    return cam_field(C, M, a, lam=lam, Lam=Lam, kind="ca-m-generic")


_BUILTINS: dict[str, Callable[..., MatrixFieldSpec]] = {
    "identity": lambda **kw: constant_field(np.eye(2), kind="identity"),
    "diag-1-9": lambda **kw: constant_field(np.diag([1.0, 9.0]), kind="diag-1-9"),
    "paper-sec5": lambda **kw: _sec5_field(),
    "ca-m-generic": lambda **kw: _cam_generic(kw.get("params")),
}


def builtin_names() -> list[str]:
    return sorted(_BUILTINS)


def builtin_field(name: str, params: dict | None = None) -> MatrixFieldSpec:
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise ValidationError(
            f"unknown built-in coefficient {name!r}; known: {builtin_names()}") from None
    return factory(params=params)


def reference_solution(name: str) -> ReferenceSolution:
    """Closed-form reference of a built-in, if it has one."""
    ref = builtin_field(name).reference
    if ref is None:
        raise ValidationError(f"built-in {name!r} has no analytic reference")
    return ref


def load_coefficient(source) -> MatrixFieldSpec:
    """Resolve a coefficient from a built-in name, a descriptor file path,
    or pass through an already constructed spec.

    Descriptor files are UTF-8 JSON, either ``{"builtin": name}`` with an
    optional ``"params"`` object, or a piecewise-constant table
    ``{"n": 2, "grid": N, "cells": [[a11, a12, a22], ...]}`` in row-major
    subcell order with optional ``"lambda"``/``"Lambda"`` bounds.
    """
    if isinstance(source, MatrixFieldSpec):
        return source
    name = str(source)
    if name in _BUILTINS:
        return builtin_field(name)
    path = Path(name)
    if not path.exists():
        raise ValidationError(
            f"coefficient {name!r} is neither a built-in nor an existing file")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"descriptor {path} is not valid JSON: {exc}") from exc
    if "builtin" in doc:
        return builtin_field(doc["builtin"], params=doc.get("params"))
    if "cells" in doc:
        if doc.get("n", 2) != 2:
            raise ValidationError("only n=2 descriptors are supported")
        cells = doc["cells"]
        grid = doc.get("grid")
        if grid is not None and grid * grid != len(cells):
            raise ValidationError(
                f"descriptor grid={grid} inconsistent with {len(cells)} cells")
        return grid_field(cells, lam=doc.get("lambda"), Lam=doc.get("Lambda"),
                          kind=f"grid:{path.name}")
    raise ValidationError(f"descriptor {path} has neither 'builtin' nor 'cells'")
