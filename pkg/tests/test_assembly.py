from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from cutdg.analysis import constant_problem, manufactured
from cutdg.assembly import (
    PenaltyParameters,
    ProblemData,
    assemble,
    compute_scalings,
    discrete_coefficients,
    export_coo,
    reaction_margin,
)
from cutdg.geometry import build_geometry
from cutdg.levelset import Plane, Sphere, Torus
from cutdg.mesh import build_grid, shift_mesh
from cutdg.solver import solve_direct
from cutdg.space import DGSpace

SPHERE_BOX = ((-1.21,) * 3, (1.21,) * 3)
W, H = 1.03 * 4 / 3, 1.03 / 3
TORUS_BOX = ((-W, -W, -H), (W, W, H))


def build(ls, bounds, counts, k, data=None, penalties=None, delta=0.0):
    mesh = build_grid(bounds, counts)
    if delta:
        mesh = shift_mesh(mesh, delta)
    geom = build_geometry(ls, mesh, 2 * k + 2)
    space = DGSpace(geom.active, k)
    data = data if data is not None else constant_problem(ls)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        scal = compute_scalings(data, ls, mesh.h)
    return geom, space, assemble(space, geom, data, penalties, scal)


@pytest.fixture(scope="module")
def sphere_k1():
    return build(Sphere(), SPHERE_BOX, (12, 12, 12), 1, manufactured(1.0, Sphere()).problem_data())


@pytest.fixture(scope="module")
def plane_pair():
    ls = Plane((0.0, 0.0, 1.0), 0.5)
    b = np.array([1.0, 0.3, 0.0])
    data = ProblemData(b=lambda x: np.tile(b, (len(x), 1)), c=lambda x: 1.0 + x[:, 0] ** 2,
                       f=lambda x: np.ones(len(x)), b_inf=float(np.linalg.norm(b)), c_inf=5.0,
                       b_seminorm=0.0)
    mesh = build_grid(((0, 0, 0), (2, 1, 1)), (2, 1, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        geom = build_geometry(ls, mesh, 4)
        scal = compute_scalings(data, ls, mesh.h)
    space = DGSpace(geom.active, 1)
    sys_ = assemble(space, geom, data, PenaltyParameters.default(1), scal)
    return geom, space, sys_, b


@pytest.mark.parametrize("name,k", [("sphere", 1), ("sphere", 2), ("torus", 1), ("torus", 2)])
def test_constant_reproduction(name, k):
    if name == "sphere":
        geom, space, system = build(Sphere(), SPHERE_BOX, (12, 12, 12), k)
    else:
        geom, space, system = build(Torus(), TORUS_BOX, (12, 12, 3), k)
    one = space.l2_project(lambda x: np.ones(len(x)))
    resid = system.A @ one - system.rhs
    assert np.abs(resid).max() <= 1e-10 * np.abs(system.rhs).max()
    report = solve_direct(system)
    vals = space.to_nodal(report.solution)
    assert np.abs(vals - 1.0).max() <= 1e-9


def test_tangential_velocity(sphere_k1):
    geom, _, system = sphere_k1
    bh = system.coefficients.b
    assert np.abs(np.sum(bh * geom.surface.normals, axis=1)).max() <= 1e-12 * system.scalings.b_inf


def test_radial_velocity_projects_to_small_field():
    out = []
    for n in (12, 24):
        geom = build_geometry(Sphere(), build_grid(SPHERE_BOX, (n, n, n)), 2)
        data = ProblemData(b=lambda x: x, c=lambda x: np.ones(len(x)), f=lambda x: np.ones(len(x)))
        out.append(np.linalg.norm(discrete_coefficients(data, geom).b, axis=1).max())
    assert out[1] < 0.6 * out[0] and out[0] < 0.3


def test_rotating_velocity_at_pole_is_tangential():
    mp = manufactured(1.0, Sphere())
    assert np.allclose(mp.b(np.array([[0.0, 1.0, 0.0]])), [[-1.0, 0.0, 0.0]])
    t = Torus()
    x = np.array([[t.R + t.r, 0.0, 0.0]])
    bt = manufactured(1.0, t).b(x)[0]
    n = t.normal(x)[0]
    assert np.allclose(bt, [0.0, (t.R + t.r) ** 2, 0.0])
    assert abs(bt @ n) < 1e-15


def test_scalings_sphere():
    data = manufactured(1.0, Sphere()).problem_data()
    s = compute_scalings(data, Sphere(), 0.1)
    assert s.b_inf == 1.0 and s.c_inf == 1.0
    assert s.inv_tau_c == pytest.approx(2.0 + s.b_seminorm, rel=1e-14)
    assert s.phi_b == pytest.approx(0.1)
    fd = compute_scalings(ProblemData(b=data.b, c=data.c, f=data.f, b_inf=1.0, c_inf=1.0), Sphere(), 0.1)
    assert fd.b_seminorm == pytest.approx(s.b_seminorm, rel=1e-5)
    double = ProblemData(b=lambda x: 2 * data.b(x), c=data.c, f=data.f, b_inf=2.0, c_inf=1.0,
                         b_seminorm=2 * s.b_seminorm)
    assert compute_scalings(double, Sphere(), 0.1).phi_b == pytest.approx(s.phi_b / 2)


def test_zero_velocity_rejected():
    data = ProblemData(b=lambda x: np.zeros((len(x), 3)), c=lambda x: np.ones(len(x)),
                       f=lambda x: np.ones(len(x)))
    with pytest.raises(ValueError):
        compute_scalings(data, Sphere(), 0.1)


def test_mesh_resolution_warning():
    data = manufactured(1.0, Torus()).problem_data()
    with pytest.warns(RuntimeWarning, match="exceeds"):
        compute_scalings(data, Torus(), 0.5)


def test_stabilization_psd_and_kills_constants(sphere_k1):
    _, space, system = sphere_k1
    G = system.gram_stab
    assert abs(G - G.T).max() < 1e-12 * abs(G).max()
    V = np.random.default_rng(0).uniform(-1, 1, (space.n_dofs, 50))
    rq = np.einsum("ij,ij->j", V, G @ V) / np.einsum("ij,ij->j", V, V)
    assert rq.min() >= -1e-12
    one = space.l2_project(lambda x: np.ones(len(x)))
    assert np.abs(G @ one).max() < 1e-11
    for name in ("gram_up", "gram_sd"):
        M = getattr(system, name)
        assert np.einsum("ij,ij->j", V, M @ V).min() >= 0


def test_sparsity_couples_only_neighbours(sphere_k1):
    _, space, system = sphere_k1
    act = space.active
    allowed = {(i, i) for i in range(act.n_cells)}
    for p, m, _ in act.faces:
        allowed |= {(int(p), int(m)), (int(m), int(p))}
    A = system.A.tocoo()
    nl = space.n_local
    blocks = set(zip((A.row // nl).tolist(), (A.col // nl).tolist()))
    assert blocks <= allowed


def test_a_of_one_one_is_discrete_area(sphere_k1):
    geom, space, system = sphere_k1
    one = space.l2_project(lambda x: np.ones(len(x)))
    val = one @ (system.A @ one)
    assert val == pytest.approx(geom.surface.weights.sum(), rel=1e-12)
    assert abs(val - 4 * math.pi) / (4 * math.pi) < 2e-2
    assert abs(one @ (system.gram_stab @ one)) < 1e-11


def brute_force_form(geom, space, system, v, w):
    """A_h(v, w) by pointwise evaluation, cell by cell."""
    s, p, coeffs = system.scalings, system.penalties, system.coefficients
    cells = space.active.cells

    def vals(c, pos, pts):
        return space.eval(c, cells[pos], pts)

    def grads(c, pos, pts):
        return space.eval_gradient(c, cells[pos], pts)

    total = 0.0
    sq = geom.surface
    for pos in np.unique(sq.cell):
        sel = sq.cell == pos
        x = sq.points[sel]
        bv = np.sum(coeffs.b[sel] * grads(v, pos, x), axis=1)
        total += np.sum(sq.weights[sel] * (coeffs.c[sel] * vals(v, pos, x) + bv) * vals(w, pos, x))
    e = geom.edges
    for q in range(len(e.points)):
        x = e.points[q:q + 1]
        k = e.point_edge[q]
        pp, mm = e.cell_plus[k], e.cell_minus[k]
        beta = 0.5 * (e.conormal_plus[k] @ coeffs.b_edge_plus[q]
                      - e.conormal_minus[k] @ coeffs.b_edge_minus[q])
        jv = vals(v, pp, x)[0] - vals(v, mm, x)[0]
        jw = vals(w, pp, x)[0] - vals(w, mm, x)[0]
        aw = 0.5 * (vals(w, pp, x)[0] + vals(w, mm, x)[0])
        total += e.weights[q] * (-beta * jv * aw + 0.5 * abs(beta) * jv * jw)
    from cutdg.geometry import face_quadrature

    for f, (pp, mm, axis) in enumerate(space.active.faces):
        rule = face_quadrature(space.active, f, 4)
        x = rule.points
        jv = vals(v, pp, x) - vals(v, mm, x)
        jw = vals(w, pp, x) - vals(w, mm, x)
        dv = grads(v, pp, x)[:, axis] - grads(v, mm, x)[:, axis]
        dw = grads(w, pp, x)[:, axis] - grads(w, mm, x)[:, axis]
        total += p.gamma0 * s.b_inf / s.h * np.dot(rule.weights, jv * jw)
        total += p.gamma1 * s.b_inf * s.h * np.dot(rule.weights, dv * dw)
    from cutdg.geometry import volume_quadrature

    for pos, cell in enumerate(cells):
        rule = volume_quadrature(space.mesh, cell, 4)
        n = geom.levelset.normal(rule.points)
        nv = np.sum(n * grads(v, pos, rule.points), axis=1)
        nw = np.sum(n * grads(w, pos, rule.points), axis=1)
        total += p.gamman * s.b_inf * np.dot(rule.weights, nv * nw)
    return total


def test_matrix_matches_pointwise_form_on_plane(plane_pair):
    geom, space, system, _ = plane_pair
    rng = np.random.default_rng(0)
    for _ in range(3):
        v, w = rng.uniform(-1, 1, (2, space.n_dofs))
        assert w @ (system.A @ v) == pytest.approx(brute_force_form(geom, space, system, v, w),
                                                   rel=1e-12, abs=1e-12)


def test_matrix_matches_pointwise_form_on_sphere():
    geom, space, system = build(Sphere(), SPHERE_BOX, (6, 6, 6), 1,
                                manufactured(1.0, Sphere()).problem_data())
    rng = np.random.default_rng(1)
    v, w = rng.uniform(-1, 1, (2, space.n_dofs))
    assert w @ (system.A @ v) == pytest.approx(brute_force_form(geom, space, system, v, w),
                                               rel=1e-11)


def test_plane_upwind_reduces_to_flat_dg(plane_pair):
    geom, space, system, b = plane_pair
    e = geom.edges
    assert np.allclose(e.conormal_plus, [1, 0, 0]) and np.allclose(e.conormal_minus, [-1, 0, 0])
    assert np.allclose(system.coefficients.edge_average(geom), b[0])
    rng = np.random.default_rng(2)
    v, w = rng.uniform(-1, 1, (2, space.n_dofs))
    # classical flat upwind penalty: 1/2 |b . n_E| [v][w] on the segment x = 1, z = 1/2
    y = (np.arange(400) + 0.5) / 400
    pts = np.column_stack([np.ones_like(y), y, np.full_like(y, 0.5)])
    jv = space.eval(v, 0, pts) - space.eval(v, 1, pts)
    jw = space.eval(w, 0, pts) - space.eval(w, 1, pts)
    flat = abs(b[0]) * np.mean(jv * jw)
    assert w @ (system.edge_upwind @ v) == pytest.approx(flat, rel=1e-5)
    assert np.abs(system.coefficients.edge_jump(geom)).max() < 1e-15


def test_symmetric_part_on_constant_field(plane_pair):
    geom, space, system, _ = plane_pair
    one = space.l2_project(lambda x: np.ones(len(x)))
    S = 0.5 * (system.A + system.A.T)
    # divergence-free constant b: 1^T S 1 = int c_h over the patch
    want = np.dot(geom.surface.weights, system.coefficients.c)
    assert one @ (S @ one) == pytest.approx(want, rel=1e-13)
    assert want == pytest.approx(2.0 + 8.0 / 3.0, rel=1e-13)


def test_reaction_margin_positive_on_sphere(sphere_k1):
    geom, _, _ = sphere_k1
    margin = reaction_margin(manufactured(1.0, Sphere()).problem_data(), geom)
    assert margin.min() > 0.5


def test_penalty_validation_and_swap(sphere_k1):
    with pytest.raises(ValueError):
        PenaltyParameters(-1.0)
    _, _, system = sphere_k1
    other = system.with_penalties(PenaltyParameters(5.0, 0.0, 1.0))
    diff = other.A - system.A
    expect = -0.5 * system.scalings.b_inf * system.scalings.h * system.face_grad_jump
    assert abs(diff - expect).max() < 1e-12 * abs(system.A).max()


def test_export_coo(tmp_path, plane_pair):
    _, _, system, _ = plane_pair
    path = tmp_path / "A.txt"
    export_coo(system.A, path)
    lines = path.read_text().splitlines()
    n, m, nnz = map(int, lines[0][1:].split())
    data = np.loadtxt(lines[1:])
    back = sp.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(n, m))
    assert nnz == system.A.nnz
    assert abs(back - system.A).max() == 0.0


def test_seminorm_matches_gram(sphere_k1):
    _, space, system = sphere_k1
    v = np.random.default_rng(3).uniform(-1, 1, space.n_dofs)
    assert system.stabilization_seminorm(v) ** 2 == pytest.approx(v @ (system.gram_stab @ v), rel=1e-11)
