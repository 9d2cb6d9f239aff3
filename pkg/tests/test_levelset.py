from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutdg.geometry import extended_normal
from cutdg.levelset import ClosestPointError, CustomLevelSet, Plane, Sphere, Torus, make_levelset


def test_sphere_values():
    s = Sphere(1.0)
    assert s.value([[1.0, 0, 0]])[0] == 0.0
    assert s.value([[0.0, 0, 0]])[0] == -1.0
    assert s.curvature == 1.0


def test_torus_values_and_singularities():
    t = Torus(1.0, 1.0 / 3.0)
    assert abs(t.value([[1.0, 0, 1 / 3]])[0]) < 1e-15
    assert t.curvature == pytest.approx(3.0)
    assert t.area == pytest.approx(4 * np.pi**2 / 3)
    with pytest.raises(ValueError):
        t.gradient([[0.0, 0.0, 0.2]])
    with pytest.raises(ValueError):
        t.gradient([[1.0, 0.0, 0.0]])


def test_closest_point_examples():
    assert np.allclose(Sphere().closest_point([[2.0, 0, 0]]), [[1, 0, 0]])
    assert np.allclose(Torus().closest_point([[1.0, 0, 0.5]]), [[1, 0, 1 / 3]], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.7, 1.3), st.floats(0, np.pi), st.floats(0, 2 * np.pi))
def test_sphere_projection_properties(r, theta, phi):
    x = r * np.array([[np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)]])
    s = Sphere()
    p = s.closest_point(x)
    assert abs(s.value(p)[0]) < 1e-14
    d = x - p
    assert np.linalg.norm(np.cross(d[0], s.normal(p)[0])) < 1e-13
    assert np.allclose(s.closest_point(p), p, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.8, 1.2), st.floats(0, 2 * np.pi), st.floats(-0.25, 0.25))
def test_torus_projection_properties(rho, angle, z):
    x = np.array([[rho * np.cos(angle), rho * np.sin(angle), z]])
    t = Torus()
    if np.hypot(rho - 1.0, z) < 1e-3:
        return
    p = t.closest_point(x)
    assert abs(t.value(p)[0]) < 1e-13
    assert np.linalg.norm(np.cross((x - p)[0], t.normal(p)[0])) < 1e-12


def test_newton_projection_for_custom_level_set():
    ell = CustomLevelSet(lambda x: x[:, 0] ** 2 + 4 * x[:, 1] ** 2 + x[:, 2] ** 2 - 1,
                         lambda x: np.column_stack([2 * x[:, 0], 8 * x[:, 1], 2 * x[:, 2]]))
    x = np.array([[0.3, 0.55, 0.2], [0.9, 0.1, -0.3]])
    p = ell.closest_point(x)
    assert np.max(np.abs(ell.value(p))) < 1e-12
    n = ell.normal(p)
    for d, nn in zip(x - p, n):
        assert np.linalg.norm(np.cross(d, nn)) < 1e-8


def test_newton_failure_raises():
    flat = CustomLevelSet(lambda x: np.ones(len(x)), lambda x: np.zeros((len(x), 3)))
    with pytest.raises((ClosestPointError, ValueError)):
        flat.closest_point([[0.0, 0.0, 0.0]])


def test_extended_normal_examples():
    s = Sphere()
    assert np.allclose(extended_normal(s, [[0, 0, 2.0]]), [[0, 0, 1]])
    assert np.allclose(extended_normal(s, [[2.0, 0, 0]]), [[1, 0, 0]])
    pts = np.random.default_rng(0).uniform(-1, 1, (5, 3))
    assert np.allclose(extended_normal(Plane((0, 0, 1), 0.5), pts), [[0, 0, 1]] * 5)


def test_sample_surface_on_surface():
    for ls in (Sphere(), Torus()):
        x = ls.sample_surface(200, seed=3)
        assert np.max(np.abs(ls.value(x))) < 1e-13


def test_make_levelset():
    assert isinstance(make_levelset("sphere"), Sphere)
    assert isinstance(make_levelset("torus"), Torus)
    with pytest.raises(ValueError):
        make_levelset("klein-bottle")
