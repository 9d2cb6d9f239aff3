"""Assembly of the stabilised cut DG operator, right-hand side and norm Grams.

All bilinear forms are written as ``E_1^T diag(w) E_2`` where the ``E`` are
sparse point-evaluation operators (values, directional derivatives, jumps,
averages) at quadrature points.  scipy's sparse products then take care of
accumulation in a fixed order.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .geometry import Geometry
from .quadrature import tensor_rule
from .space import DGSpace

log = logging.getLogger(__name__)


@dataclass
class ProblemData:
    """Coefficients of ``b . grad_Gamma u + c u = f`` as ambient callables.

    Callables take an ``(n, 3)`` array.  ``b_jacobian`` returns ``(n, 3, 3)``
    with ``J[q, i, j] = d b_i / d x_j``; without it the Jacobian is taken by
    central differences.  Bounds left as ``None`` are estimated by sampling
    the exact surface.
    """

    b: Callable
    c: Callable
    f: Callable
    u: Optional[Callable] = None
    grad_u: Optional[Callable] = None
    b_jacobian: Optional[Callable] = None
    b_inf: Optional[float] = None
    c_inf: Optional[float] = None
    b_seminorm: Optional[float] = None


@dataclass(frozen=True)
class PenaltyParameters:
    gamma0: float
    gamma1: float = 0.5
    gamman: float = 1.0

    @classmethod
    def default(cls, degree: int) -> "PenaltyParameters":
        return cls(gamma0=5.0 * degree**2, gamma1=0.5, gamman=1.0)

    def __post_init__(self):
        if min(self.gamma0, self.gamma1, self.gamman) < 0:
            raise ValueError("penalty parameters must be nonnegative")


@dataclass(frozen=True)
class ScalingConstants:
    tau_c: float
    phi_b: float
    h: float
    b_inf: float
    c_inf: float
    b_seminorm: float
    curvature: float

    @property
    def inv_tau_c(self) -> float:
        return 1.0 / self.tau_c


def _jacobian_fd(b, x, step=1e-6):
    jac = np.empty(x.shape + (3,))
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        jac[:, :, j] = (b(x + e) - b(x - e)) / (2 * step)
    return jac


def _surface_samples(geom_or_levelset, n):
    ls = getattr(geom_or_levelset, "levelset", geom_or_levelset)
    try:
        return ls.sample_surface(n)
    except NotImplementedError:
        if isinstance(geom_or_levelset, Geometry):
            return geom_or_levelset.surface.lifted
        raise


def compute_scalings(data: ProblemData, geom, h: float, n_samples: int = 10_000) -> ScalingConstants:
    """Reference time ``tau_c`` and ``phi_b = h / b_inf``.

    ``geom`` is a :class:`Geometry` or a level set; missing bounds in ``data``
    are sampled on ``n_samples`` quasi-random points of the exact surface.
    """
    ls = getattr(geom, "levelset", geom)
    need = data.b_inf is None or data.c_inf is None or data.b_seminorm is None
    x = _surface_samples(geom, n_samples) if need else None
    b_inf = data.b_inf
    if b_inf is None:
        b_inf = float(np.linalg.norm(data.b(x), axis=1).max())
    if not b_inf > 0:
        raise ValueError("the velocity field vanishes on the surface (b_inf = 0)")
    c_inf = data.c_inf
    if c_inf is None:
        c_inf = float(np.abs(np.broadcast_to(data.c(x), (len(x),))).max())
    seminorm = data.b_seminorm
    if seminorm is None:
        jac = data.b_jacobian(x) if data.b_jacobian is not None else _jacobian_fd(data.b, x)
        n = ls.normal(x)
        proj = np.eye(3)[None] - n[:, :, None] * n[:, None, :]
        seminorm = float(np.linalg.norm(proj @ jac @ proj, ord=2, axis=(1, 2)).max())
    kappa = float(ls.curvature)
    inv_tau = c_inf + seminorm + b_inf * kappa
    tau_c = 1.0 / inv_tau
    if h > b_inf * tau_c:
        warnings.warn(f"mesh size h={h:.3g} exceeds b_inf*tau_c={b_inf * tau_c:.3g}",
                      RuntimeWarning, stacklevel=2)
    return ScalingConstants(tau_c, h / b_inf, h, b_inf, c_inf, seminorm, kappa)


def _project(normals, vectors):
    return vectors - np.sum(normals * vectors, axis=-1, keepdims=True) * normals


@dataclass
class DiscreteCoefficients:
    """``b_h``, ``c_h``, ``f_h`` at surface quadrature points and one-sided ``b_h``
    at edge quadrature points."""

    b: np.ndarray
    c: np.ndarray
    f: np.ndarray
    b_edge_plus: np.ndarray
    b_edge_minus: np.ndarray

    def edge_average(self, geom: Geometry) -> np.ndarray:
        e = geom.edges
        k = e.point_edge
        return 0.5 * (np.sum(e.conormal_plus[k] * self.b_edge_plus, axis=1)
                      - np.sum(e.conormal_minus[k] * self.b_edge_minus, axis=1))

    def edge_jump(self, geom: Geometry) -> np.ndarray:
        e = geom.edges
        k = e.point_edge
        return (np.sum(e.conormal_plus[k] * self.b_edge_plus, axis=1)
                + np.sum(e.conormal_minus[k] * self.b_edge_minus, axis=1))


def discrete_coefficients(data: ProblemData, geom: Geometry) -> DiscreteCoefficients:
    """Lift to the exact surface, evaluate, and project ``b`` tangentially."""
    sq = geom.surface
    n = len(sq.weights)
    bh = _project(sq.normals, data.b(sq.lifted))
    ch = np.broadcast_to(np.asarray(data.c(sq.lifted), dtype=float), (n,)).copy()
    fh = np.broadcast_to(np.asarray(data.f(sq.lifted), dtype=float), (n,)).copy()
    e = geom.edges
    if len(e.points):
        be = data.b(geom.levelset.closest_point(e.points))
        bp = _project(e.normal_plus[e.point_edge], be)
        bm = _project(e.normal_minus[e.point_edge], be)
    else:
        bp = bm = np.zeros((0, 3))
    for name, arr in (("b_h", bh), ("c_h", ch), ("f_h", fh)):
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite values in {name}")
    return DiscreteCoefficients(bh, ch, fh, bp, bm)


@dataclass
class AssembledSystem:
    """System matrix ``A = a_h + s_h`` with right-hand side and Gram blocks.

    Gram blocks (all symmetric PSD):

    ``mass_surface``   (v, w) on the surface patches
    ``streamline``     (b_h . grad v, b_h . grad w) on the patches
    ``edge_upwind``    (|{b_h; n_E}| [v], [w]) on the edges
    ``face_jump``      ([v], [w]) on interior faces
    ``face_grad_jump`` ([n_F . grad v], [n_F . grad w]) on interior faces
    ``normal_grad``    (n . grad v, n . grad w) on whole active cells
    ``mass_volume``    (v, w) on whole active cells
    """

    A: sp.csr_matrix
    rhs: np.ndarray
    space: DGSpace
    penalties: PenaltyParameters
    scalings: ScalingConstants
    coefficients: DiscreteCoefficients
    mass_surface: sp.csr_matrix
    streamline: sp.csr_matrix
    edge_upwind: sp.csr_matrix
    face_jump: sp.csr_matrix
    face_grad_jump: sp.csr_matrix
    normal_grad: sp.csr_matrix
    mass_volume: sp.csr_matrix
    advection: sp.csr_matrix = field(repr=False, default=None)
    jump_operators: tuple = field(repr=False, default=None)

    @property
    def n_dofs(self) -> int:
        return self.A.shape[0]

    def stabilization(self, penalties: PenaltyParameters | None = None) -> sp.csr_matrix:
        p = self.penalties if penalties is None else penalties
        s = self.scalings
        return (p.gamma0 * s.b_inf / s.h * self.face_jump
                + p.gamma1 * s.b_inf * s.h * self.face_grad_jump
                + p.gamman * s.b_inf * self.normal_grad).tocsr()

    def stabilization_seminorm(self, v, penalties: PenaltyParameters | None = None) -> float:
        """``|v|_{s_h}`` from weighted sums of squared jumps (no cancellation)."""
        if self.jump_operators is None:
            return float(np.sqrt(max(v @ (self.stabilization(penalties) @ v), 0.0)))
        p = self.penalties if penalties is None else penalties
        s = self.scalings
        fjump, fdjump, fw, nder, vw = self.jump_operators
        total = (p.gamma0 * s.b_inf / s.h * np.dot(fw, (fjump @ v) ** 2)
                 + p.gamma1 * s.b_inf * s.h * np.dot(fw, (fdjump @ v) ** 2)
                 + p.gamman * s.b_inf * np.dot(vw, (nder @ v) ** 2))
        return float(np.sqrt(total))

    @property
    def gram_stab(self) -> sp.csr_matrix:
        return self.stabilization()

    @property
    def gram_up(self) -> sp.csr_matrix:
        return (self.scalings.inv_tau_c * self.mass_surface + 0.5 * self.edge_upwind).tocsr()

    @property
    def gram_sd(self) -> sp.csr_matrix:
        return (self.gram_up + self.scalings.phi_b * self.streamline).tocsr()

    def with_penalties(self, penalties: PenaltyParameters) -> "AssembledSystem":
        """Same discretisation with different ghost-penalty weights."""
        A = (self.advection + self.stabilization(penalties)).tocsr()
        out = AssembledSystem(**{**self.__dict__, "A": A, "penalties": penalties})
        return out


def _weighted(left, weights, right):
    return (left.T @ sp.diags(weights) @ right).tocsr()


def face_operators(space: DGSpace, degree: int):
    """Jump and normal-derivative-jump evaluation operators on interior faces."""
    active, mesh = space.active, space.mesh
    faces = active.faces
    ref, w = tensor_rule(degree, 2)
    hs = mesh.cell_size
    nq = len(w)
    points = np.empty((len(faces), nq, 3))
    for axis in range(3):
        sel = np.flatnonzero(faces[:, 2] == axis)
        tang = [a for a in range(3) if a != axis]
        lower = mesh.cell_lower(active.cells[faces[sel, 0]]).astype(float)
        lower[:, axis] += hs[axis]
        p = np.repeat(lower[:, None, :], nq, axis=1)
        p[:, :, tang] += ref * hs[tang]
        points[sel] = p
    points = points.reshape(-1, 3)
    face_of_point = np.repeat(np.arange(len(faces)), nq)
    axis = faces[face_of_point, 2]
    weights = np.tile(w, len(faces)) * np.prod(hs) / hs[axis]
    plus = faces[face_of_point, 0]
    minus = faces[face_of_point, 1]
    normal = np.eye(3)[axis]
    jump = space.evaluation_matrix(plus, points) - space.evaluation_matrix(minus, points)
    djump = (space.derivative_matrix(plus, points, normal)
             - space.derivative_matrix(minus, points, normal))
    return jump.tocsr(), djump.tocsr(), weights


def assemble(space: DGSpace, geom: Geometry, data: ProblemData,
             penalties: PenaltyParameters | None = None,
             scalings: ScalingConstants | None = None,
             quad_degree: int | None = None) -> AssembledSystem:
    """Stabilised cut DG system for ``b . grad u + c u = f`` on the discrete surface."""
    k = space.degree
    qdeg = 2 * k + 2 if quad_degree is None else quad_degree
    if penalties is None:
        penalties = PenaltyParameters.default(k)
    if scalings is None:
        scalings = compute_scalings(data, geom, geom.h)
    coeffs = discrete_coefficients(data, geom)

    sq = geom.surface
    phi_k = space.evaluation_matrix(sq.cell, sq.points)
    d_k = space.derivative_matrix(sq.cell, sq.points, coeffs.b)
    reaction = sp.diags(sq.weights * coeffs.c)
    mass_surface = _weighted(phi_k, sq.weights, phi_k)
    streamline = _weighted(d_k, sq.weights, d_k)
    surface_form = (phi_k.T @ reaction @ phi_k + phi_k.T @ sp.diags(sq.weights) @ d_k).tocsr()
    rhs = phi_k.T @ (sq.weights * coeffs.f)

    e = geom.edges
    if len(e.points):
        kp = e.cell_plus[e.point_edge]
        km = e.cell_minus[e.point_edge]
        ev_p = space.evaluation_matrix(kp, e.points)
        ev_m = space.evaluation_matrix(km, e.points)
        jump = (ev_p - ev_m).tocsr()
        avg = (0.5 * (ev_p + ev_m)).tocsr()
        beta = coeffs.edge_average(geom)
        edge_upwind = _weighted(jump, e.weights * np.abs(beta), jump)
        edge_form = (-_weighted(avg, e.weights * beta, jump) + 0.5 * edge_upwind).tocsr()
    else:
        edge_upwind = sp.csr_matrix((space.n_dofs, space.n_dofs))
        edge_form = edge_upwind

    fjump, fdjump, fw = face_operators(space, qdeg)
    face_jump = _weighted(fjump, fw, fjump)
    face_grad_jump = _weighted(fdjump, fw, fdjump)

    vpts, vw, vpos = space.volume_points(qdeg)
    normal = geom.levelset.normal(vpts)
    nder = space.derivative_matrix(vpos, vpts, normal)
    normal_grad = _weighted(nder, vw, nder)
    vals = space.evaluation_matrix(vpos, vpts)
    mass_volume = _weighted(vals, vw, vals)

    advection = (surface_form + edge_form).tocsr()
    system = AssembledSystem(
        A=None, rhs=np.asarray(rhs).ravel(), space=space, penalties=penalties,
        scalings=scalings, coefficients=coeffs, mass_surface=mass_surface,
        streamline=streamline, edge_upwind=edge_upwind, face_jump=face_jump,
        face_grad_jump=face_grad_jump, normal_grad=normal_grad,
        mass_volume=mass_volume, advection=advection,
        jump_operators=(fjump, fdjump, fw, nder, vw))
    system.A = (advection + system.stabilization()).tocsr()
    system.A.sort_indices()
    log.debug("assembled %d dofs, %d nonzeros", system.n_dofs, system.A.nnz)
    return system


def reaction_margin(data: ProblemData, geom: Geometry, step: float = 1e-6) -> np.ndarray:
    """``c_h - 1/2 div_{Gamma_h} b_h`` at surface quadrature points.

    The tangential divergence of ``P_h (b o p)`` on a flat facet equals the
    trace of the tangential derivative of ``b o p``, taken here by central
    differences along two orthonormal facet tangents.
    """
    sq = geom.surface
    n = sq.normals
    t1 = np.cross(n, np.eye(3)[np.argmin(np.abs(n), axis=1)])
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    ls = geom.levelset

    def bp(x):
        return data.b(ls.closest_point(x))

    div = np.zeros(len(sq.weights))
    for t in (t1, t2):
        db = (bp(sq.points + step * t) - bp(sq.points - step * t)) / (2 * step)
        div += np.sum(t * db, axis=1)
    c = np.broadcast_to(np.asarray(data.c(sq.lifted), dtype=float), div.shape)
    margin = c - 0.5 * div
    if margin.min() <= 0:
        warnings.warn("c_h - div(b_h)/2 is not positive on the discrete surface",
                      RuntimeWarning, stacklevel=2)
    return margin


def export_coo(matrix, path) -> None:
    """Write ``row col value`` lines (0-based) for external spectral tools."""
    m = sp.coo_matrix(matrix)
    order = np.lexsort((m.col, m.row))
    with open(path, "w") as fh:
        fh.write(f"% {m.shape[0]} {m.shape[1]} {m.nnz}\n")
        for r, c, v in zip(m.row[order], m.col[order], m.data[order]):
            fh.write(f"{r} {c} {v:.16e}\n")
