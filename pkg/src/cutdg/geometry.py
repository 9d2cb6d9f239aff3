"""Piecewise-linear surface reconstruction on Cartesian cells and its quadrature.

Every hexahedron is split into six Kuhn tetrahedra sharing the diagonal from
the lower to the upper corner.  The split is translation invariant, so the two
triangles covering a cell face are the same seen from either neighbour, and
the zero set of the linear interpolant of ``phi`` is watertight across cells.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .levelset import LevelSet
from .mesh import ActiveMesh, BackgroundMesh, extract_active_mesh
from .quadrature import QuadratureRule, gauss_legendre_01, tensor_rule, triangle_rule

VERTEX_TIE = 1e-12
SLIVER_AREA = 1e-14

PERMS = list(itertools.permutations(range(3)))
_AXES = np.eye(3, dtype=int)
# corner c of a cell sits at lattice offset (c >> 2 & 1, c >> 1 & 1, c & 1)
CORNER_OFFSETS = np.array([[(c >> 2) & 1, (c >> 1) & 1, c & 1] for c in range(8)])


def _corner(offset) -> int:
    return int(4 * offset[0] + 2 * offset[1] + offset[2])


TET_CORNERS = np.array(
    [[0, _corner(_AXES[p[0]]), _corner(_AXES[p[0]] + _AXES[p[1]]), 7] for p in PERMS]
)
# tet sharing the same face triangle in the upper neighbour along perm[0]
_FACE_PARTNER = np.array([PERMS.index((p[1], p[2], p[0])) for p in PERMS])
TET_EDGES = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def _marching_table():
    table = {}
    for mask in range(1, 15):
        pos = [i for i in range(4) if mask >> i & 1]
        neg = [i for i in range(4) if not mask >> i & 1]
        if len(pos) == 1 or len(neg) == 1:
            lone, others = (pos[0], neg) if len(pos) == 1 else (neg[0], pos)
            tris = [[(lone, o) for o in others]]
        else:
            a, b = pos
            c, d = neg
            tris = [[(a, c), (a, d), (b, d)], [(a, c), (b, d), (b, c)]]
        table[mask] = np.array(tris)
    return table


MARCHING_TABLE = _marching_table()


def _crossing(gid_a, gid_b, xa, xb, fa, fb):
    """Zero of the linear interpolant on a lattice edge, computed in a canonical
    vertex order so both owning cells produce bit-identical points."""
    swap = gid_a > gid_b
    xa, xb = np.where(swap[:, None], xb, xa), np.where(swap[:, None], xa, xb)
    fa, fb = np.where(swap, fb, fa), np.where(swap, fa, fb)
    t = fa / (fa - fb)
    return xa + t[:, None] * (xb - xa)


@dataclass
class SurfacePatch:
    """Triangles approximating the surface inside one active cell."""

    cell: int
    vertices: np.ndarray
    normals: np.ndarray
    areas: np.ndarray

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    @property
    def is_empty(self) -> bool:
        return len(self.areas) == 0

    def quadrature(self, degree: int) -> QuadratureRule:
        bary, w = triangle_rule(degree)
        pts = np.einsum("qi,tid->tqd", bary, self.vertices).reshape(-1, 3)
        return QuadratureRule(pts, np.outer(self.areas, w).ravel(), degree)


@dataclass
class Reconstruction:
    """Discrete surface on the active mesh, stored as flat triangle arrays.

    ``tri_cell`` holds active-cell positions, ``tet_normals[pos, t]`` the unit
    gradient of the linear interpolant on tetrahedron ``t`` (zero if uncut).
    """

    levelset: LevelSet
    mesh: BackgroundMesh
    active: ActiveMesh
    vertex_values: np.ndarray
    tri_vertices: np.ndarray
    tri_normals: np.ndarray
    tri_areas: np.ndarray
    tri_cell: np.ndarray
    tri_tet: np.ndarray
    tet_normals: np.ndarray
    tet_cut: np.ndarray

    @property
    def h(self) -> float:
        return self.mesh.h

    @property
    def area(self) -> float:
        return float(self.tri_areas.sum())

    def patch(self, pos: int) -> SurfacePatch:
        sel = self.tri_cell == pos
        return SurfacePatch(int(self.active.cells[pos]), self.tri_vertices[sel],
                            self.tri_normals[sel], self.tri_areas[sel])

    def cell_vertex_ids(self, cells) -> np.ndarray:
        ijk = self.mesh.cell_lattice(cells)
        return self.mesh.vertex_index(ijk[:, None, :] + CORNER_OFFSETS[None, :, :])

    def write_triangle_soup(self, path) -> None:
        """One triangle per line: nine coordinates ``x0 y0 z0 x1 ... z2``."""
        np.savetxt(path, self.tri_vertices.reshape(-1, 9), fmt="%.16e")


def vertex_values(levelset: LevelSet, mesh: BackgroundMesh) -> np.ndarray:
    phi = np.array(levelset.value(mesh.vertices()), dtype=float)
    tie = VERTEX_TIE * mesh.h
    phi[np.abs(phi) < tie] = tie
    return phi


def reconstruct(levelset: LevelSet, mesh: BackgroundMesh) -> Reconstruction:
    """Marching-tetrahedra reconstruction over the whole background mesh."""
    phi = vertex_values(levelset, mesh)
    nx, ny, nz = mesh.counts
    all_cells = np.arange(mesh.n_cells)
    ijk = mesh.cell_lattice(all_cells)
    cv = mesh.vertex_index(ijk[:, None, :] + CORNER_OFFSETS[None, :, :])
    positive = phi[cv] > 0
    cut = positive.any(axis=1) & ~positive.all(axis=1)
    _check_inside_box(mesh, ijk, cv, phi, cut)
    active = extract_active_mesh(mesh, cut)

    verts = mesh.vertices()
    acv = cv[active.cells]
    tet_gid = acv[:, TET_CORNERS]                      # (na, 6, 4)
    tet_phi = phi[tet_gid]
    mask = ((tet_phi > 0) * (1 << np.arange(4))).sum(axis=2)
    tet_cut = (mask > 0) & (mask < 15)

    hs = mesh.cell_size
    tet_normals = np.zeros(tet_phi.shape[:2] + (3,))
    for t, p in enumerate(PERMS):
        f = tet_phi[:, t, :]
        g = np.zeros((len(f), 3))
        g[:, p[0]] = (f[:, 1] - f[:, 0]) / hs[p[0]]
        g[:, p[1]] = (f[:, 2] - f[:, 1]) / hs[p[1]]
        g[:, p[2]] = (f[:, 3] - f[:, 2]) / hs[p[2]]
        tet_normals[:, t, :] = g
    norms = np.linalg.norm(tet_normals, axis=2, keepdims=True)
    tet_normals = np.where(norms > 0, tet_normals / np.where(norms > 0, norms, 1.0), 0.0)

    tris, tcell, ttet = [], [], []
    for m, table in MARCHING_TABLE.items():
        cell_pos, tet = np.nonzero(mask == m)
        if cell_pos.size == 0:
            continue
        gids = tet_gid[cell_pos, tet]
        vals = tet_phi[cell_pos, tet]
        for tri in table:
            corners = []
            for a, b in tri:
                ga, gb = gids[:, a], gids[:, b]
                corners.append(_crossing(ga, gb, verts[ga], verts[gb], vals[:, a], vals[:, b]))
            tris.append(np.stack(corners, axis=1))
            tcell.append(cell_pos)
            ttet.append(tet)
    tri_vertices = np.concatenate(tris)
    tri_cell = np.concatenate(tcell)
    tri_tet = np.concatenate(ttet)
    order = np.lexsort((tri_tet, tri_cell))
    tri_vertices, tri_cell, tri_tet = tri_vertices[order], tri_cell[order], tri_tet[order]

    cross = np.cross(tri_vertices[:, 1] - tri_vertices[:, 0], tri_vertices[:, 2] - tri_vertices[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    keep = areas > SLIVER_AREA * mesh.h**2
    return Reconstruction(
        levelset=levelset,
        mesh=mesh,
        active=active,
        vertex_values=phi,
        tri_vertices=tri_vertices[keep],
        tri_normals=tet_normals[tri_cell[keep], tri_tet[keep]],
        tri_areas=areas[keep],
        tri_cell=tri_cell[keep],
        tri_tet=tri_tet[keep],
        tet_normals=tet_normals,
        tet_cut=tet_cut,
    )


def _check_inside_box(mesh, ijk, cv, phi, cut):
    counts = np.array(mesh.counts)
    on_boundary = ((ijk == 0) | (ijk == counts - 1)).any(axis=1) & cut
    for c in np.flatnonzero(on_boundary):
        for axis in range(3):
            for side in (0, 1):
                if ijk[c, axis] != (0 if side == 0 else counts[axis] - 1):
                    continue
                corners = CORNER_OFFSETS[:, axis] == side
                s = phi[cv[c, corners]] > 0
                if s.any() and not s.all():
                    warnings.warn("the surface leaves the background box; its boundary carries no edge terms", RuntimeWarning, stacklevel=3)
                    return


def reconstruct_surface(levelset: LevelSet, mesh: BackgroundMesh, cell: int) -> SurfacePatch:
    """Patch of a single background cell (possibly empty)."""
    try:
        recon = reconstruct(levelset, mesh)
    except ValueError as err:
        if "does not cut" in str(err):
            return SurfacePatch(int(cell), np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros(0))
        raise
    pos = int(recon.active.position(cell))
    if pos < 0:
        return SurfacePatch(int(cell), np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros(0))
    return recon.patch(pos)


@dataclass
class EdgeSet:
    """Interior surface edges (patch boundaries lying on interior mesh faces).

    Per edge: endpoints, owner positions, owner facet normals and the outward
    co-normals.  Per quadrature point: coordinates, weights, owning edge.
    """

    endpoints: np.ndarray
    cell_plus: np.ndarray
    cell_minus: np.ndarray
    normal_plus: np.ndarray
    normal_minus: np.ndarray
    conormal_plus: np.ndarray
    conormal_minus: np.ndarray
    face: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    point_edge: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.cell_plus)

    @property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.endpoints[:, 1] - self.endpoints[:, 0], axis=1)

    @property
    def conormal_defect(self) -> np.ndarray:
        return np.linalg.norm(self.conormal_plus + self.conormal_minus, axis=1)


def _conormal(face_normal, facet_normal, direction):
    v = face_normal - np.sum(face_normal * facet_normal, axis=1, keepdims=True) * facet_normal
    v = v - np.sum(v * direction, axis=1, keepdims=True) * direction
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(norm < 1e-12):
        raise ValueError("surface facet parallel to a mesh face: co-normal undefined")
    return v / norm


def extract_edges(recon: Reconstruction, degree: int) -> EdgeSet:
    """Segments of the discrete surface on interior faces, with co-normals."""
    mesh, active, phi = recon.mesh, recon.active, recon.vertex_values
    verts = mesh.vertices()
    faces = active.faces
    plus_gids = recon.cell_vertex_ids(active.cells[faces[:, 0]])
    ends, cp, cm, np_, nm, fidx = [], [], [], [], [], []
    for t, p in enumerate(PERMS):
        # the plus tet touches the upper face x_{p[0]} = 1 with corners v1, v2, v3
        sel = np.flatnonzero(faces[:, 2] == p[0])
        if sel.size == 0:
            continue
        gid = plus_gids[sel][:, TET_CORNERS[t, 1:]]
        f = phi[gid]
        pos = f > 0
        npos = pos.sum(axis=1)
        hit = (npos > 0) & (npos < 3)
        if not hit.any():
            continue
        sel, gid, f, pos = sel[hit], gid[hit], f[hit], pos[hit]
        lone_is_pos = pos.sum(axis=1) == 1
        lone = np.where(lone_is_pos, np.argmax(pos, axis=1), np.argmin(pos, axis=1))
        others = np.stack([(lone + 1) % 3, (lone + 2) % 3], axis=1)
        rows = np.arange(len(sel))
        gl, fl = gid[rows, lone], f[rows, lone]
        pts = []
        for j in range(2):
            go, fo = gid[rows, others[:, j]], f[rows, others[:, j]]
            pts.append(_crossing(gl, go, verts[gl], verts[go], fl, fo))
        ends.append(np.stack(pts, axis=1))
        cp.append(faces[sel, 0])
        cm.append(faces[sel, 1])
        np_.append(recon.tet_normals[faces[sel, 0], t])
        nm.append(recon.tet_normals[faces[sel, 1], _FACE_PARTNER[t]])
        fidx.append(sel)
    if not ends:
        empty3 = np.zeros((0, 3))
        return EdgeSet(np.zeros((0, 2, 3)), *(np.zeros(0, dtype=np.int64),) * 2,
                       empty3, empty3, empty3, empty3, np.zeros(0, dtype=np.int64),
                       empty3, np.zeros(0), np.zeros(0, dtype=np.int64))
    endpoints = np.concatenate(ends)
    fidx = np.concatenate(fidx)
    cp, cm = np.concatenate(cp), np.concatenate(cm)
    np_, nm = np.concatenate(np_), np.concatenate(nm)
    order = np.lexsort((endpoints[:, 0, 2], endpoints[:, 0, 1], endpoints[:, 0, 0], fidx))
    endpoints, fidx, cp, cm, np_, nm = (a[order] for a in (endpoints, fidx, cp, cm, np_, nm))

    seg = endpoints[:, 1] - endpoints[:, 0]
    length = np.linalg.norm(seg, axis=1)
    keep = length > 1e-13 * mesh.h
    endpoints, fidx, cp, cm, np_, nm, seg, length = (
        a[keep] for a in (endpoints, fidx, cp, cm, np_, nm, seg, length))
    if np.any(np.linalg.norm(np_, axis=1) == 0) or np.any(np.linalg.norm(nm, axis=1) == 0):
        raise RuntimeError("surface segment on a face without an owning facet")
    direction = seg / length[:, None]
    face_normal = _AXES[faces[fidx, 2]].astype(float)
    conormal_plus = _conormal(face_normal, np_, direction)
    conormal_minus = _conormal(-face_normal, nm, direction)

    x, w = gauss_legendre_01(degree)
    points = endpoints[:, None, 0, :] + x[None, :, None] * seg[:, None, :]
    weights = np.outer(length, w)
    point_edge = np.repeat(np.arange(len(length)), len(w))
    return EdgeSet(endpoints, cp, cm, np_, nm, conormal_plus, conormal_minus, fidx,
                   points.reshape(-1, 3), weights.ravel(), point_edge)


def cell_boundary_segments(recon: Reconstruction):
    """Patch boundary segments per (active cell, cell face), computed cell by cell.

    Returns a dict keyed by ``(pos, axis, side)`` mapping to a list of
    endpoint pairs.  Used to check watertightness independently of
    :func:`extract_edges`.
    """
    mesh, phi = recon.mesh, recon.vertex_values
    verts = mesh.vertices()
    out = {}
    gids_all = recon.cell_vertex_ids(recon.active.cells)
    for t, p in enumerate(PERMS):
        # upper face x_{p[0]} = 1: corners 1, 2, 3; lower face x_{p[2]} = 0: corners 0, 1, 2
        for side, axis, local in ((1, p[0], (1, 2, 3)), (0, p[2], (0, 1, 2))):
            gid = gids_all[:, TET_CORNERS[t, list(local)]]
            f = phi[gid]
            pos = f > 0
            npos = pos.sum(axis=1)
            for c in np.flatnonzero((npos > 0) & (npos < 3)):
                lone = int(np.argmax(pos[c])) if npos[c] == 1 else int(np.argmin(pos[c]))
                o = [(lone + 1) % 3, (lone + 2) % 3]
                ga = np.array([gid[c, lone]] * 2)
                gb = gid[c, o]
                seg = _crossing(ga, gb, verts[ga], verts[gb], f[c, [lone, lone]], f[c, o])
                out.setdefault((int(c), axis, side), []).append(seg)
    return out


@dataclass
class SurfaceQuadrature:
    points: np.ndarray
    weights: np.ndarray
    cell: np.ndarray
    normals: np.ndarray
    lifted: np.ndarray
    triangle: np.ndarray


def surface_quadrature(recon: Reconstruction, degree: int) -> SurfaceQuadrature:
    bary, w = triangle_rule(degree)
    nq = len(w)
    pts = np.einsum("qi,tid->tqd", bary, recon.tri_vertices).reshape(-1, 3)
    weights = np.outer(recon.tri_areas, w).ravel()
    tri = np.repeat(np.arange(len(recon.tri_areas)), nq)
    return SurfaceQuadrature(pts, weights, recon.tri_cell[tri], recon.tri_normals[tri],
                             recon.levelset.closest_point(pts), tri)


def volume_quadrature(mesh: BackgroundMesh, cell: int, degree: int) -> QuadratureRule:
    ref, w = tensor_rule(degree, 3)
    lower = mesh.cell_lower(cell)
    hs = mesh.cell_size
    return QuadratureRule(lower + ref * hs, w * np.prod(hs), degree)


def face_quadrature(active: ActiveMesh, face: int, degree: int) -> QuadratureRule:
    """Tensor Gauss rule on the full face shared by two active cells."""
    mesh = active.background
    plus, _, axis = active.faces[face]
    lower = mesh.cell_lower(active.cells[plus]).astype(float)
    hs = mesh.cell_size
    lower[axis] += hs[axis]
    tang = [a for a in range(3) if a != axis]
    ref, w = tensor_rule(degree, 2)
    pts = np.tile(lower, (len(w), 1))
    pts[:, tang] += ref * hs[tang]
    return QuadratureRule(pts, w * hs[tang[0]] * hs[tang[1]], degree)


def extended_normal(levelset: LevelSet, x) -> np.ndarray:
    return levelset.normal(x)


@dataclass
class Geometry:
    """Everything the assembly needs about the discrete surface."""

    recon: Reconstruction
    surface: SurfaceQuadrature
    edges: EdgeSet
    degree: int

    @property
    def levelset(self) -> LevelSet:
        return self.recon.levelset

    @property
    def active(self) -> ActiveMesh:
        return self.recon.active

    @property
    def mesh(self) -> BackgroundMesh:
        return self.recon.mesh

    @property
    def h(self) -> float:
        return self.recon.h


def _lifted_stretch(levelset: LevelSet, points, tangents, step):
    """``|Dp t| / |t|`` per point by central differences of the closest-point map."""
    unit = tangents / np.linalg.norm(tangents, axis=-1, keepdims=True)
    fwd = levelset.closest_point(points + step * unit)
    bwd = levelset.closest_point(points - step * unit)
    return (fwd - bwd) / (2 * step)


def lift_surface_quadrature(sq: SurfaceQuadrature, recon: Reconstruction) -> SurfaceQuadrature:
    """Move points onto the exact surface, weights scaled by the area Jacobian of ``p``."""
    tri = recon.tri_vertices[sq.triangle]
    t1, t2 = tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    step = 1e-6 * recon.h
    d1 = _lifted_stretch(recon.levelset, sq.points, t1, step)
    d2 = _lifted_stretch(recon.levelset, sq.points, t2, step)
    u1 = t1 / np.linalg.norm(t1, axis=1, keepdims=True)
    # area element ratio of the lifted map restricted to the triangle plane
    e2 = t2 - np.sum(t2 * u1, axis=1, keepdims=True) * u1
    e2 /= np.linalg.norm(e2, axis=1, keepdims=True)
    d2o = (d2 * np.linalg.norm(t2, axis=1, keepdims=True)
           - d1 * np.sum(t2 * u1, axis=1, keepdims=True)) / np.sum(t2 * e2, axis=1, keepdims=True)
    ratio = np.linalg.norm(np.cross(d1, d2o), axis=1)
    normals = recon.levelset.normal(sq.lifted)
    return SurfaceQuadrature(sq.lifted.copy(), sq.weights * ratio, sq.cell, normals,
                             sq.lifted, sq.triangle)


def lift_edges(edges: EdgeSet, levelset: LevelSet, h: float) -> EdgeSet:
    if not len(edges.points):
        return edges
    seg = edges.endpoints[:, 1] - edges.endpoints[:, 0]
    d = _lifted_stretch(levelset, edges.points, seg[edges.point_edge], 1e-6 * h)
    weights = edges.weights * np.linalg.norm(d, axis=1)
    return replace(edges, points=levelset.closest_point(edges.points), weights=weights)


def build_geometry(levelset: LevelSet, mesh: BackgroundMesh, degree: int,
                   lifted: bool = False) -> Geometry:
    """Reconstruction, surface and edge quadrature.

    ``lifted=True`` moves all surface and edge quadrature points onto the
    exact surface with a first-order area correction and uses exact normals.
    The reconstruction still defines the active mesh and the edge topology.
    """
    recon = reconstruct(levelset, mesh)
    sq = surface_quadrature(recon, degree)
    edges = extract_edges(recon, degree)
    if lifted:
        sq = lift_surface_quadrature(sq, recon)
        edges = lift_edges(edges, levelset, mesh.h)
    return Geometry(recon, sq, edges, degree)
