"""Manufactured solutions, error norms, convergence orders and stability diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .assembly import AssembledSystem, PenaltyParameters, ProblemData, reaction_margin
from .geometry import Geometry
from .levelset import LevelSet, Sphere, Torus

INFSUP_LIMIT = 3000


@dataclass
class ManufacturedProblem:
    """``u = x y / pi * atan(z / sqrt(eps))`` with rotational velocity and ``c = 1``.

    ``f = b . P grad u + u`` is evaluated with the exact normal of ``levelset``,
    so the callables are only meaningful on the exact surface.
    """

    epsilon: float
    levelset: LevelSet

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def u(self, x):
        x = np.asarray(x, dtype=float)
        return x[:, 0] * x[:, 1] / math.pi * np.arctan(x[:, 2] / math.sqrt(self.epsilon))

    def grad_u(self, x):
        x = np.asarray(x, dtype=float)
        se = math.sqrt(self.epsilon)
        at = np.arctan(x[:, 2] / se)
        return np.column_stack([
            x[:, 1] * at / math.pi,
            x[:, 0] * at / math.pi,
            x[:, 0] * x[:, 1] / math.pi * se / (self.epsilon + x[:, 2] ** 2),
        ])

    def b(self, x):
        x = np.asarray(x, dtype=float)
        s = np.hypot(x[:, 0], x[:, 1])
        return np.column_stack([-x[:, 1] * s, x[:, 0] * s, np.zeros(len(x))])

    def b_jacobian(self, x):
        x = np.asarray(x, dtype=float)
        X, Y = x[:, 0], x[:, 1]
        s = np.hypot(X, Y)
        safe = np.where(s > 0, s, 1.0)
        jac = np.zeros((len(x), 3, 3))
        jac[:, 0, 0] = -X * Y / safe
        jac[:, 0, 1] = -s - Y**2 / safe
        jac[:, 1, 0] = s + X**2 / safe
        jac[:, 1, 1] = X * Y / safe
        return jac

    def c(self, x):
        return np.ones(len(np.asarray(x)))

    def f(self, x):
        n = self.levelset.normal(x)
        g = self.grad_u(x)
        tg = g - np.sum(g * n, axis=1, keepdims=True) * n
        return np.sum(self.b(x) * tg, axis=1) + self.c(x) * self.u(x)

    @property
    def b_inf(self):
        ls = self.levelset
        if isinstance(ls, Sphere) and not np.any(ls.center):
            return ls.radius**2
        if isinstance(ls, Torus):
            return (ls.R + ls.r) ** 2
        return None

    def problem_data(self) -> ProblemData:
        return ProblemData(b=self.b, c=self.c, f=self.f, u=self.u, grad_u=self.grad_u,
                           b_jacobian=self.b_jacobian, b_inf=self.b_inf, c_inf=1.0)


def manufactured(epsilon: float, levelset: LevelSet) -> ManufacturedProblem:
    return ManufacturedProblem(epsilon, levelset)


def constant_problem(levelset: LevelSet, b=None) -> ProblemData:
    """``c = f = 1`` so that ``u = 1`` solves the continuous and discrete problems."""
    mp = ManufacturedProblem(1.0, levelset)
    vel = mp.b if b is None else b
    return ProblemData(b=vel, c=mp.c, f=lambda x: np.ones(len(x)), u=lambda x: np.ones(len(x)),
                       grad_u=lambda x: np.zeros((len(x), 3)),
                       b_jacobian=mp.b_jacobian if b is None else None,
                       b_inf=mp.b_inf if b is None else None, c_inf=1.0)


@dataclass
class ErrorReport:
    l2_error: float
    up_error: float
    sd_error: float
    stab_seminorm: float
    sdstar_error: float

    @property
    def sdh_error(self) -> float:
        return math.hypot(self.sd_error, self.stab_seminorm)


def error_norms(system: AssembledSystem, uh, problem, geom: Geometry) -> ErrorReport:
    """Errors of ``u_h`` against ``u o p`` on the discrete surface.

    The exact extension is continuous across edges and constant along
    normals, so edge jumps and the ghost-penalty seminorm of the error only
    involve ``u_h``.
    """
    u = problem.u
    grad_u = problem.grad_u
    space = system.space
    s = system.scalings
    coeffs = system.coefficients
    uh = np.asarray(uh)
    sq = geom.surface
    cell_dofs = uh[space.local_dofs(sq.cell)]
    uh_q = np.einsum("qi,qi->q", space.basis_values(sq.cell, sq.points), cell_dofs)
    guh_q = np.einsum("qid,qi->qd", space.basis_gradients(sq.cell, sq.points), cell_dofs)
    e = u(sq.lifted) - uh_q
    stream = np.sum(coeffs.b * (grad_u(sq.lifted) - guh_q), axis=1)
    l2sq = float(np.dot(sq.weights, e**2))
    edge_sq = max(float(uh @ (system.edge_upwind @ uh)), 0.0)
    up_sq = s.inv_tau_c * l2sq + 0.5 * edge_sq
    stream_sq = float(np.dot(sq.weights, stream**2))
    sd_sq = up_sq + s.phi_b * stream_sq
    stab = system.stabilization_seminorm(uh)

    ed = geom.edges
    bdry_sq = 0.0
    if len(ed.points):
        ue = u(geom.levelset.closest_point(ed.points))
        for cells in (ed.cell_plus, ed.cell_minus):
            pos = cells[ed.point_edge]
            val = np.einsum("qi,qi->q", space.basis_values(pos, ed.points), uh[space.local_dofs(pos)])
            bdry_sq += float(np.dot(ed.weights, (ue - val) ** 2))
    sdstar_sq = l2sq / s.phi_b + s.phi_b * stream_sq + s.b_inf * bdry_sq
    return ErrorReport(math.sqrt(l2sq), math.sqrt(up_sq), math.sqrt(sd_sq),
                       stab, math.sqrt(sdstar_sq))


def eoc(errors, hs) -> list[float]:
    """Orders ``log(E_{l-1}/E_l) / log(h_{l-1}/h_l)``; NaN where ``h`` repeats."""
    errors = np.asarray(errors, dtype=float)
    hs = np.asarray(hs, dtype=float)
    if errors.shape != hs.shape or errors.size < 2:
        raise ValueError("need at least two (error, h) pairs of equal length")
    if np.any(errors <= 0) or np.any(hs <= 0):
        raise ValueError("errors and mesh sizes must be positive")
    out = []
    for l in range(1, len(errors)):
        dh = math.log(hs[l - 1] / hs[l])
        out.append(math.log(errors[l - 1] / errors[l]) / dh if dh != 0 else math.nan)
    return out


@dataclass
class DiagnosticsReport:
    conormal_jump_max: float
    norm_extension_ratio: float
    coercivity_min: float | None
    infsup_min: float | None
    c0h_min: float | None


def conormal_jump_max(system: AssembledSystem, geom: Geometry) -> float:
    jump = system.coefficients.edge_jump(geom)
    return float(np.abs(jump).max()) if jump.size else 0.0


def norm_extension_ratio(system: AssembledSystem, n_samples: int = 100, seed: int = 0) -> float:
    """Max over random fields of ``h^-1 |v|_T^2 / (|v|_K^2 + |[v]|_F^2 + h |n.grad v|_T^2)``."""
    h = system.scalings.h
    rng = np.random.default_rng(seed)
    V = rng.uniform(-1.0, 1.0, size=(system.n_dofs, n_samples))

    def quad(M):
        return np.einsum("ij,ij->j", V, M @ V)

    num = quad(system.mass_volume) / h
    den = quad(system.mass_surface) + quad(system.face_jump) + h * quad(system.normal_grad)
    return float(np.max(num / den))


def coercivity_min(system: AssembledSystem, reference: PenaltyParameters | None = None,
                   dense: bool | None = None) -> float:
    """Smallest generalised eigenvalue of ``sym(A)`` against ``gram_up + s_h``.

    ``reference`` fixes the penalties of the norm (defaults to the system's
    own), so ablated operators can be measured in the default norm.
    """
    symA = (0.5 * (system.A + system.A.T)).tocsc()
    norm = (system.gram_up + system.stabilization(reference)).tocsc()
    n = system.n_dofs
    if dense is None:
        dense = n <= 600
    if dense:
        vals = scipy.linalg.eigh(symA.toarray(), norm.toarray(), eigvals_only=True,
                                 subset_by_index=[0, 0])
        return float(vals[0])
    v0 = np.random.default_rng(0).standard_normal(n)
    vals = spla.eigsh(symA, k=1, M=norm, sigma=0.0, which="LM", v0=v0,
                      return_eigenvectors=False, tol=1e-10)
    return float(vals[0])


def infsup_min(system: AssembledSystem) -> float:
    """Smallest singular value of ``L^-1 A L^-T`` with ``L L^T = gram_sd + s_h``."""
    n = system.n_dofs
    if n > INFSUP_LIMIT:
        raise ValueError(f"inf-sup diagnostic limited to n <= {INFSUP_LIMIT}")
    G = (system.gram_sd + system.gram_stab).toarray()
    try:
        L = scipy.linalg.cholesky(0.5 * (G + G.T), lower=True)
    except np.linalg.LinAlgError as err:
        raise np.linalg.LinAlgError("norm Gram matrix is not positive definite") from err
    X = scipy.linalg.solve_triangular(L, system.A.toarray(), lower=True)
    Y = scipy.linalg.solve_triangular(L, X.T, lower=True).T
    return float(scipy.linalg.svdvals(Y)[-1])


def diagnostics(system: AssembledSystem, geom: Geometry, problem: ProblemData | None = None,
                rng_seed: int = 0, reference: PenaltyParameters | None = None,
                with_infsup: bool | None = None, n_samples: int = 100) -> DiagnosticsReport:
    if with_infsup is None:
        with_infsup = system.n_dofs <= INFSUP_LIMIT
    c0h = float(reaction_margin(problem, geom).min()) if problem is not None else None
    return DiagnosticsReport(
        conormal_jump_max=conormal_jump_max(system, geom),
        norm_extension_ratio=norm_extension_ratio(system, n_samples, rng_seed),
        coercivity_min=coercivity_min(system, reference),
        infsup_min=infsup_min(system) if with_infsup else None,
        c0h_min=c0h,
    )


def fit_loglog_slope(hs, values) -> float:
    """Least-squares slope of ``log(values)`` against ``log(hs)``."""
    return float(np.polyfit(np.log(hs), np.log(values), 1)[0])
