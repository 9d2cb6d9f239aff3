"""Analytic level-set descriptions of closed surfaces in R^3."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import qmc


class ClosestPointError(ValueError):
    pass


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ValueError("points must have three coordinates")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite point")
    return x


class LevelSet:
    """Base class; subclasses provide ``value``, ``gradient`` and ``closest_point``.

    All methods are vectorised over a trailing coordinate axis of length 3.
    """

    kind = "custom"
    curvature = 0.0
    area = None

    def value(self, x) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def closest_point(self, x) -> np.ndarray:
        return _newton_projection(self, _as_points(x))

    def normal(self, x) -> np.ndarray:
        """Unit normal field ``grad phi / |grad phi|`` extended off the surface."""
        g = self.gradient(x)
        norm = np.linalg.norm(g, axis=-1, keepdims=True)
        if np.any(norm < 1e-14):
            raise ValueError("level-set gradient vanishes")
        return g / norm

    @property
    def reach(self) -> float:
        return math.inf if self.curvature == 0 else 1.0 / self.curvature

    def sample_surface(self, n: int, seed: int = 0) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class Sphere(LevelSet):
    kind = "sphere"

    def __init__(self, radius: float = 1.0, center=(0.0, 0.0, 0.0)):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=float)

    @property
    def curvature(self):
        return 1.0 / self.radius

    @property
    def area(self):
        return 4.0 * math.pi * self.radius**2

    def value(self, x):
        x = _as_points(x)
        return np.linalg.norm(x - self.center, axis=-1) - self.radius

    def gradient(self, x):
        d = _as_points(x) - self.center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        if np.any(r == 0):
            raise ValueError("sphere gradient undefined at the centre")
        return d / r

    def closest_point(self, x):
        d = _as_points(x) - self.center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        if np.any(r == 0):
            raise ClosestPointError("closest point undefined at the sphere centre")
        return self.center + self.radius * d / r

    def sample_surface(self, n, seed=0):
        u = qmc.Halton(d=2, seed=seed).random(n)
        z = 1.0 - 2.0 * u[:, 0]
        phi = 2.0 * math.pi * u[:, 1]
        s = np.sqrt(1.0 - z**2)
        return self.center + self.radius * np.column_stack([s * np.cos(phi), s * np.sin(phi), z])

    def __repr__(self):
        return f"Sphere(radius={self.radius})"


class Torus(LevelSet):
    """Torus about the z-axis with major radius ``R`` and tube radius ``r``."""

    kind = "torus"

    def __init__(self, R: float = 1.0, r: float = 1.0 / 3.0):
        if not 0 < r < R:
            raise ValueError("torus radii must satisfy 0 < r < R")
        self.R = float(R)
        self.r = float(r)

    @property
    def curvature(self):
        return 1.0 / self.r

    @property
    def area(self):
        return 4.0 * math.pi**2 * self.R * self.r

    def _tube_offset(self, x):
        x = _as_points(x)
        rho = np.hypot(x[..., 0], x[..., 1])
        if np.any(rho < 1e-14):
            raise ValueError("torus level set is singular on the z-axis")
        c = np.stack([self.R * x[..., 0] / rho, self.R * x[..., 1] / rho, np.zeros_like(rho)], axis=-1)
        d = x - c
        dist = np.linalg.norm(d, axis=-1, keepdims=True)
        if np.any(dist < 1e-14):
            raise ValueError("torus level set is singular on the tube centre circle")
        return c, d, dist

    def value(self, x):
        x = _as_points(x)
        rho = np.hypot(x[..., 0], x[..., 1])
        return np.sqrt(x[..., 2] ** 2 + (rho - self.R) ** 2) - self.r

    def gradient(self, x):
        _, d, dist = self._tube_offset(x)
        return d / dist

    def closest_point(self, x):
        try:
            c, d, dist = self._tube_offset(x)
        except ValueError as err:
            raise ClosestPointError(str(err)) from err
        return c + self.r * d / dist

    def sample_surface(self, n, seed=0):
        u = qmc.Halton(d=2, seed=seed).random(n)
        theta = 2.0 * math.pi * u[:, 0]
        psi = 2.0 * math.pi * u[:, 1]
        rho = self.R + self.r * np.cos(psi)
        return np.column_stack([rho * np.cos(theta), rho * np.sin(theta), self.r * np.sin(psi)])

    def __repr__(self):
        return f"Torus(R={self.R}, r={self.r})"


class Plane(LevelSet):
    """``phi(x) = n . x - offset`` with ``n`` normalised."""

    kind = "plane"

    def __init__(self, normal=(0.0, 0.0, 1.0), offset: float = 0.0):
        n = np.asarray(normal, dtype=float)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("plane normal must be nonzero")
        self.n = n / norm
        self.offset = float(offset) / norm

    def value(self, x):
        return _as_points(x) @ self.n - self.offset

    def gradient(self, x):
        x = _as_points(x)
        return np.broadcast_to(self.n, x.shape).copy()

    def closest_point(self, x):
        x = _as_points(x)
        return x - self.value(x)[..., None] * self.n

    def __repr__(self):
        return f"Plane(normal={self.n.tolist()}, offset={self.offset})"


class CustomLevelSet(LevelSet):
    """User-supplied ``phi`` and gradient; closest points by damped Newton."""

    def __init__(self, value, gradient, curvature: float = 0.0, area=None):
        self._value = value
        self._gradient = gradient
        self.curvature = float(curvature)
        self.area = area

    def value(self, x):
        return np.asarray(self._value(_as_points(x)), dtype=float)

    def gradient(self, x):
        return np.asarray(self._gradient(_as_points(x)), dtype=float)


def _newton_to_surface(ls: LevelSet, y: np.ndarray, tol: float, maxiter: int) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(y)))) if y.size else 1.0
    for _ in range(maxiter):
        phi = ls.value(y)
        if np.all(np.abs(phi) <= tol * scale):
            return y
        g = ls.gradient(y)
        g2 = np.sum(g * g, axis=-1)
        if np.any(g2 < 1e-28):
            raise ClosestPointError("vanishing gradient during projection")
        y = y - (phi / g2)[..., None] * g
    raise ClosestPointError("closest-point iteration did not converge")


def _newton_projection(ls: LevelSet, x: np.ndarray, tol: float = 1e-13, maxiter: int = 50):
    """Newton onto the zero set, then alternate tangent-plane foot and Newton.

    Plain Newton only finds *a* surface point; the outer loop removes the
    tangential component of ``x - p`` so that ``p`` is the orthogonal foot.
    """
    if ls.curvature > 0:
        if np.any(np.abs(ls.value(x)) >= ls.reach):
            raise ClosestPointError("point outside the reach of the surface")
    x = np.array(x, dtype=float, copy=True)
    y = _newton_to_surface(ls, x.copy(), tol, maxiter)
    scale = max(1.0, float(np.max(np.abs(x)))) if x.size else 1.0
    for _ in range(maxiter):
        n = ls.normal(y)
        d = x - y
        tangential = d - np.sum(d * n, axis=-1, keepdims=True) * n
        if np.all(np.linalg.norm(tangential, axis=-1) <= 1e-12 * scale):
            return y
        y = _newton_to_surface(ls, y + tangential, tol, maxiter)
    raise ClosestPointError("closest-point iteration did not converge")


def make_levelset(name: str, **params) -> LevelSet:
    if name == "sphere":
        return Sphere(params.get("radius", 1.0))
    if name == "torus":
        return Torus(params.get("R", 1.0), params.get("r", 1.0 / 3.0))
    if name == "plane":
        return Plane(params.get("normal", (0, 0, 1)), params.get("offset", 0.0))
    raise ValueError(f"unknown geometry {name!r}")
