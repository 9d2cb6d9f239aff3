from __future__ import annotations

import math
import warnings

import numpy as np
import pytest

from cutdg.geometry import (
    build_geometry,
    cell_boundary_segments,
    extract_edges,
    face_quadrature,
    reconstruct,
    reconstruct_surface,
    surface_quadrature,
    volume_quadrature,
)
from cutdg.levelset import Plane, Sphere, Torus
from cutdg.mesh import build_grid, shift_mesh

SPHERE_BOX = ((-1.21,) * 3, (1.21,) * 3)


def plane_recon(counts=(1, 1, 1), upper=(1, 1, 1), normal=(0, 0, 1), offset=0.5):
    mesh = build_grid(((0, 0, 0), upper), counts)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return reconstruct(Plane(normal, offset), mesh)


def test_plane_cut_unit_cube():
    recon = plane_recon()
    assert recon.area == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(recon.tri_normals, [0, 0, 1])
    sq = surface_quadrature(recon, 3)
    assert sq.weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(sq.points[:, 2], 0.5)


def test_uncut_cell_has_empty_patch():
    mesh = build_grid(SPHERE_BOX, (12, 12, 12))
    corner = mesh.cell_index(np.array([[0, 0, 0]]))[0]
    assert reconstruct_surface(Sphere(), mesh, corner).is_empty


def test_patch_invariants_sphere(sphere, sphere_mesh):
    recon = reconstruct(sphere, sphere_mesh)
    assert np.all(recon.tri_areas > 1e-14 * recon.h**2)
    assert np.allclose(np.linalg.norm(recon.tri_normals, axis=1), 1.0)
    centroids = recon.tri_vertices.mean(axis=1)
    assert np.all(np.sum(recon.tri_normals * sphere.gradient(centroids), axis=1) > 0)
    for pos in (0, 7, recon.active.n_cells - 1):
        patch = recon.patch(pos)
        rule = patch.quadrature(2)
        assert rule.weights.sum() == pytest.approx(patch.area, rel=1e-13)


def test_linear_integral_over_reference_triangle():
    from cutdg.quadrature import triangle_quadrature

    rule = triangle_quadrature(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float), 1)
    assert rule.npoints == 1
    assert rule.integrate(lambda p: p[:, 0]) == pytest.approx(1 / 6, abs=1e-15)


def test_volume_and_face_rules(sphere_mesh):
    unit = build_grid(((0, 0, 0), (1, 1, 1)), (1, 1, 1))
    rule = volume_quadrature(unit, 0, 2)
    assert rule.integrate(lambda p: p[:, 0] ** 2) == pytest.approx(1 / 3, abs=1e-15)
    assert volume_quadrature(sphere_mesh, 5, 1).weights.sum() == pytest.approx(sphere_mesh.h**3)
    act = reconstruct(Sphere(), sphere_mesh).active
    frule = face_quadrature(act, 3, 2)
    assert frule.weights.sum() == pytest.approx(sphere_mesh.h**2, rel=1e-14)
    axis = act.faces[3, 2]
    assert np.ptp(frule.points[:, axis]) == 0.0


def test_plane_edges_are_coplanar():
    recon = plane_recon(counts=(2, 1, 1), upper=(2, 1, 1), normal=(0, 0, 1), offset=0.5)
    edges = extract_edges(recon, 2)
    assert edges.n_edges >= 1
    assert edges.lengths.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(edges.conormal_plus, -edges.conormal_minus, atol=1e-15)
    assert np.allclose(edges.conormal_plus, [1, 0, 0])


def test_tilted_plane_edges_are_coplanar():
    mesh = build_grid(((0, 0, 0), (3, 3, 3)), (3, 3, 3))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        recon = reconstruct(Plane((1, 2, 3), 3.1), mesh)
    edges = extract_edges(recon, 2)
    assert edges.conormal_defect.max() < 1e-12


def test_conormal_geometry(sphere, sphere_mesh):
    recon = reconstruct(sphere, sphere_mesh)
    e = extract_edges(recon, 2)
    direction = e.endpoints[:, 1] - e.endpoints[:, 0]
    face_normal = np.eye(3)[recon.active.faces[e.face, 2]]
    for cn, nn, sign in ((e.conormal_plus, e.normal_plus, 1.0),
                         (e.conormal_minus, e.normal_minus, -1.0)):
        assert np.allclose(np.linalg.norm(cn, axis=1), 1.0)
        assert np.max(np.abs(np.sum(cn * direction, axis=1))) < 1e-12
        assert np.max(np.abs(np.sum(cn * nn, axis=1))) < 1e-12
        # outward: the co-normal leaves the owner through the shared face
        assert np.all(sign * np.sum(cn * face_normal, axis=1) > 0)


@pytest.mark.parametrize("delta", [0.0, 0.41, 0.93])
def test_watertight(sphere, delta):
    mesh = shift_mesh(build_grid(SPHERE_BOX, (12, 12, 12)), delta)
    recon = reconstruct(sphere, mesh)
    segs = cell_boundary_segments(recon)
    act = recon.active
    lookup = {}
    for f, (p, m, axis) in enumerate(act.faces):
        lookup[(int(p), int(axis), 1)] = (int(m), f)
    edges = extract_edges(recon, 1)
    matched = 0
    for (pos, axis, side), pieces in segs.items():
        if side != 1 or (pos, axis, 1) not in lookup:
            continue
        other, face = lookup[(pos, axis, 1)]
        mine = sorted(tuple(np.round(np.sort(s, axis=0).ravel(), 12)) for s in pieces)
        theirs = sorted(tuple(np.round(np.sort(s, axis=0).ravel(), 12))
                        for s in segs.get((other, axis, 0), []))
        assert mine == theirs
        matched += len(mine)
    assert matched == edges.n_edges


def geometry_errors(ls, counts, bounds):
    g = build_geometry(ls, build_grid(bounds, counts), 4)
    sq = g.surface
    area_err = abs(sq.weights.sum() - ls.area)
    phi_err = np.abs(ls.value(sq.points)).max()
    normal_err = np.linalg.norm(sq.normals - ls.normal(sq.points), axis=1).max()
    defect = g.edges.conormal_defect.max()
    return area_err, phi_err, normal_err, defect


def test_sphere_geometry_rates(sphere):
    errs = np.array([geometry_errors(sphere, (n, n, n), SPHERE_BOX) for n in (12, 24, 48)])
    rates = np.log2(errs[:-1] / errs[1:])
    assert np.all(np.abs(rates[:, 0] - 2) < 0.3)
    assert np.all(np.abs(rates[:, 1] - 2) < 0.3)
    assert np.all(rates[:, 2] > 0.7)
    assert np.all(rates[:, 3] > 0.7)


def test_triangle_soup_dump(tmp_path, sphere, sphere_mesh):
    recon = reconstruct(sphere, sphere_mesh)
    path = tmp_path / "soup.txt"
    recon.write_triangle_soup(path)
    data = np.loadtxt(path)
    assert data.shape == (len(recon.tri_areas), 9)
    assert np.array_equal(data.reshape(-1, 3, 3), recon.tri_vertices)


def test_lifted_quadrature_is_high_order(sphere):
    errs = []
    for n in (12, 24):
        g = build_geometry(sphere, build_grid(SPHERE_BOX, (n, n, n)), 4, lifted=True)
        assert np.max(np.abs(sphere.value(g.surface.points))) < 1e-13
        errs.append(abs(g.surface.weights.sum() - 4 * math.pi))
    assert errs[1] < errs[0] / 16
    assert errs[0] < 1e-5


def test_torus_area_converges(torus):
    W, H = 1.03 * 4 / 3, 1.03 / 3
    bounds = ((-W, -W, -H), (W, W, H))
    e = [abs(build_geometry(torus, build_grid(bounds, (12 * m, 12 * m, 3 * m)), 2)
             .surface.weights.sum() - torus.area) for m in (1, 2)]
    assert e[1] < e[0] / 3
