from __future__ import annotations

import warnings

import pytest

from cutdg.levelset import Sphere, Torus
from cutdg.mesh import build_grid


@pytest.fixture(autouse=True)
def _quiet_resolution_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="mesh size h=")
        warnings.filterwarnings("ignore", message=".*curvature.*")
        yield


@pytest.fixture(scope="session")
def sphere():
    return Sphere(1.0)


@pytest.fixture(scope="session")
def torus():
    return Torus(1.0, 1.0 / 3.0)


@pytest.fixture(scope="session")
def sphere_mesh():
    return build_grid(((-1.21,) * 3, (1.21,) * 3), (12, 12, 12))
