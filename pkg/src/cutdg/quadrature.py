"""Quadrature rules on reference shapes and their push-forward to physical entities.

Reference shapes:

* interval ``[0, 1]``
* triangle with vertices ``(0, 0), (1, 0), (0, 1)`` (barycentric points)
* unit square / unit cube (tensor Gauss-Legendre)
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_TRIANGLE_DEGREE = 20


@dataclass(frozen=True)
class QuadratureRule:
    """Points and positive weights; ``order`` is the polynomial exactness degree."""

    points: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        if self.points.shape[0] != self.weights.shape[0]:
            raise ValueError("points and weights disagree in length")
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")

    @property
    def npoints(self) -> int:
        return self.weights.shape[0]

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f(self.points)))


@lru_cache(maxsize=None)
def gauss_legendre_01(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [0, 1] exact for polynomials of ``degree``."""
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    n = max(1, degree // 2 + 1)
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _orbit_s3(a: float) -> list[tuple[float, float, float]]:
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)]


# Symmetric rules, barycentric coordinates, weights normalised to sum 1.
_SYMMETRIC_TRIANGLE = {
    1: ([(1 / 3, 1 / 3, 1 / 3)], [1.0]),
    2: (_orbit_s3(1 / 6), [1 / 3] * 3),
    4: (
        _orbit_s3(0.445948490915965) + _orbit_s3(0.091576213509771),
        [0.223381589678011] * 3 + [0.109951743655322] * 3,
    ),
    5: (
        [(1 / 3, 1 / 3, 1 / 3)]
        + _orbit_s3(0.470142064105115)
        + _orbit_s3(0.101286507323456),
        [0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3,
    ),
}


@lru_cache(maxsize=None)
def _collapsed_triangle(degree: int) -> tuple[np.ndarray, np.ndarray]:
    # Duffy collapse of the unit square; the Jacobian adds one degree in the
    # collapsed direction.
    x1, w1 = gauss_legendre_01(degree + 1)
    x2, w2 = gauss_legendre_01(degree)
    s, t = np.meshgrid(x1, x2, indexing="ij")
    ws = np.outer(w1 * (1.0 - x1), w2)
    l1 = s.ravel()
    l2 = ((1.0 - s) * t).ravel()
    bary = np.column_stack([1.0 - l1 - l2, l1, l2])
    weights = 2.0 * ws.ravel()
    return bary, weights


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points ``(n, 3)`` and weights summing to one."""
    if degree < 1:
        raise ValueError("triangle quadrature degree must be >= 1")
    if degree > MAX_TRIANGLE_DEGREE:
        raise ValueError(f"triangle quadrature supports degree <= {MAX_TRIANGLE_DEGREE}")
    key = min((d for d in _SYMMETRIC_TRIANGLE if d >= degree), default=None)
    if key is not None:
        pts, wts = _SYMMETRIC_TRIANGLE[key]
        bary = np.array(pts, dtype=float)
        w = np.array(wts, dtype=float)
        return bary, w / w.sum()
    bary, w = _collapsed_triangle(degree)
    return bary, w / w.sum()


def triangle_quadrature(vertices, degree: int) -> QuadratureRule:
    """Rule on a physical triangle given as a ``(3, dim)`` vertex array."""
    vertices = np.asarray(vertices, dtype=float)
    bary, w = triangle_rule(degree)
    e1 = vertices[1] - vertices[0]
    e2 = vertices[2] - vertices[0]
    if vertices.shape[1] == 3:
        area = 0.5 * np.linalg.norm(np.cross(e1, e2))
    else:
        area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
    return QuadratureRule(bary @ vertices, area * w, degree)


def segment_quadrature(a, b, degree: int) -> QuadratureRule:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x, w = gauss_legendre_01(degree)
    pts = a[None, :] + x[:, None] * (b - a)[None, :]
    return QuadratureRule(pts, np.linalg.norm(b - a) * w, degree)


@lru_cache(maxsize=None)
def tensor_rule(degree: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre on ``[0, 1]^dim``."""
    x, w = gauss_legendre_01(degree)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    pts = np.column_stack([g.ravel() for g in grids])
    weights = np.prod(np.column_stack([g.ravel() for g in wgrids]), axis=1)
    return pts, weights


def box_quadrature(lower, upper, degree: int) -> QuadratureRule:
    """Rule on an axis-aligned box; a zero-width axis yields a face rule."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    extent = upper - lower
    active = np.flatnonzero(extent > 0)
    ref, w = tensor_rule(degree, len(active))
    pts = np.tile(lower, (len(w), 1))
    pts[:, active] += ref * extent[active]
    return QuadratureRule(pts, w * np.prod(extent[active]), degree)
