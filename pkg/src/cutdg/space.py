"""Discontinuous tensor-product Legendre space on the active mesh."""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre

from .geometry import volume_quadrature
from .levelset import LevelSet
from .mesh import ActiveMesh
from .quadrature import tensor_rule


class InactiveCellError(KeyError):
    pass


class DGSpace:
    """Q^k polynomials per active cell, modal Legendre coefficients.

    Global dofs are cell-major: dof ``pos * n_local + (i * (k+1) + j) * (k+1) + l``
    multiplies ``L_i(xi) L_j(eta) L_l(zeta)`` on the cell at active position ``pos``.
    """

    def __init__(self, active: ActiveMesh, degree: int):
        if degree < 1:
            raise ValueError("degree must be >= 1")
        self.active = active
        self.degree = int(degree)
        self.n_local = (degree + 1) ** 3
        self.n_dofs = active.n_cells * self.n_local
        self._dcoef = np.zeros((degree + 1, degree + 1))
        for m in range(degree + 1):
            e = np.zeros(degree + 1)
            e[m] = 1.0
            d = legendre.legder(e)
            self._dcoef[: len(d), m] = d

    @property
    def mesh(self):
        return self.active.background

    @cached_property
    def cell_centers(self) -> np.ndarray:
        return self.mesh.cell_center(self.active.cells)

    def reference_coords(self, pos, points) -> np.ndarray:
        return 2.0 * (np.asarray(points) - self.cell_centers[pos]) / self.mesh.cell_size

    def _tensor(self, xi):
        v = [legendre.legvander(xi[:, a], self.degree) for a in range(3)]
        dv = [v[a] @ self._dcoef for a in range(3)]
        return v, dv

    def basis_values(self, pos, points) -> np.ndarray:
        """Basis values ``(n, n_local)`` of cell ``pos[q]`` at ``points[q]``."""
        v, _ = self._tensor(self.reference_coords(pos, points))
        return np.einsum("qi,qj,ql->qijl", *v).reshape(len(v[0]), -1)

    def basis_gradients(self, pos, points) -> np.ndarray:
        """Physical gradients ``(n, n_local, 3)``."""
        v, dv = self._tensor(self.reference_coords(pos, points))
        scale = 2.0 / self.mesh.cell_size
        n = len(v[0])
        gx = np.einsum("qi,qj,ql->qijl", dv[0], v[1], v[2]).reshape(n, -1) * scale[0]
        gy = np.einsum("qi,qj,ql->qijl", v[0], dv[1], v[2]).reshape(n, -1) * scale[1]
        gz = np.einsum("qi,qj,ql->qijl", v[0], v[1], dv[2]).reshape(n, -1) * scale[2]
        return np.stack([gx, gy, gz], axis=-1)

    def local_dofs(self, pos) -> np.ndarray:
        return np.asarray(pos)[:, None] * self.n_local + np.arange(self.n_local)[None, :]

    def sparse_rows(self, pos, values) -> sp.csr_matrix:
        """Scatter per-point local rows ``(n, n_local)`` into an ``(n, n_dofs)`` matrix."""
        n = values.shape[0]
        indptr = np.arange(n + 1) * self.n_local
        return sp.csr_matrix((values.ravel(), self.local_dofs(pos).ravel(), indptr),
                             shape=(n, self.n_dofs))

    def evaluation_matrix(self, pos, points) -> sp.csr_matrix:
        return self.sparse_rows(pos, self.basis_values(pos, points))

    def derivative_matrix(self, pos, points, directions) -> sp.csr_matrix:
        """Rows evaluate ``directions[q] . grad v`` at ``points[q]``."""
        g = self.basis_gradients(pos, points)
        return self.sparse_rows(pos, np.einsum("qid,qd->qi", g, directions))

    def _positions(self, cell) -> np.ndarray:
        pos = self.active.position(np.atleast_1d(cell))
        if np.any(pos < 0):
            raise InactiveCellError(f"cell {cell} is not active")
        return pos

    def eval(self, coeffs, cell, x) -> np.ndarray:
        """Values of the field at points ``x`` in background cell(s) ``cell``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        pos = np.broadcast_to(self._positions(cell), (len(x),))
        phi = self.basis_values(pos, x)
        return np.einsum("qi,qi->q", phi, np.asarray(coeffs)[self.local_dofs(pos)])

    def eval_gradient(self, coeffs, cell, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        pos = np.broadcast_to(self._positions(cell), (len(x),))
        g = self.basis_gradients(pos, x)
        return np.einsum("qid,qi->qd", g, np.asarray(coeffs)[self.local_dofs(pos)])

    def mass_diagonal(self) -> np.ndarray:
        """Diagonal of the (exactly diagonal) cell mass matrix."""
        k = self.degree
        m1 = 2.0 / (2.0 * np.arange(k + 1) + 1.0)
        ref = np.einsum("i,j,l->ijl", m1, m1, m1).ravel()
        return ref * np.prod(self.mesh.cell_size) / 8.0

    def volume_points(self, degree=None):
        """Quadrature on every active cell: points, weights, positions."""
        degree = 2 * self.degree + 2 if degree is None else degree
        ref, w = tensor_rule(degree, 3)
        hs = self.mesh.cell_size
        lower = self.mesh.cell_lower(self.active.cells)
        pts = lower[:, None, :] + ref[None, :, :] * hs
        n = len(w)
        return (pts.reshape(-1, 3), np.tile(w * np.prod(hs), self.active.n_cells),
                np.repeat(np.arange(self.active.n_cells), n))

    def l2_project(self, f, levelset: LevelSet | None = None, degree=None) -> np.ndarray:
        """Cell-wise L2 projection of ``f``; with ``levelset`` project ``f o p``."""
        pts, w, pos = self.volume_points(degree)
        vals = f(levelset.closest_point(pts) if levelset is not None else pts)
        phi = self.basis_values(pos, pts)
        rhs = np.zeros((self.active.n_cells, self.n_local))
        np.add.at(rhs, pos, phi * (w * vals)[:, None])
        return (rhs / self.mass_diagonal()[None, :]).ravel()

    @cached_property
    def _nodal_vandermonde(self) -> np.ndarray:
        k = self.degree
        nodes = -1.0 + 2.0 * np.arange(k + 1) / k
        v = legendre.legvander(nodes, k)
        return np.einsum("ai,bj,cl->abcijl", v, v, v).reshape(self.n_local, self.n_local)

    def to_nodal(self, coeffs) -> np.ndarray:
        c = np.asarray(coeffs).reshape(self.active.n_cells, self.n_local)
        return c @ self._nodal_vandermonde.T

    def from_nodal(self, nodal) -> np.ndarray:
        return np.linalg.solve(self._nodal_vandermonde, np.asarray(nodal).T).T.ravel()

    @cached_property
    def _node_keys(self) -> np.ndarray:
        k = self.degree
        ijk = self.mesh.cell_lattice(self.active.cells)
        m = np.array(np.meshgrid(*([np.arange(k + 1)] * 3), indexing="ij")).reshape(3, -1).T
        lattice = ijk[:, None, :] * k + m[None, :, :]
        dims = np.array(self.mesh.counts) * k + 1
        flat = (lattice[..., 0] * dims[1] + lattice[..., 1]) * dims[2] + lattice[..., 2]
        return np.unique(flat.ravel(), return_inverse=True)[1]

    def oswald_interpolate(self, coeffs) -> np.ndarray:
        """Average nodal values shared by several active cells."""
        nodal = self.to_nodal(coeffs).ravel()
        keys = self._node_keys
        sums = np.bincount(keys, weights=nodal)
        counts = np.bincount(keys)
        averaged = (sums / counts)[keys].reshape(self.active.n_cells, self.n_local)
        return self.from_nodal(averaged)


def l2_project(space: DGSpace, f, levelset: LevelSet | None = None) -> np.ndarray:
    return space.l2_project(f, levelset)


def oswald_interpolate(space: DGSpace, coeffs) -> np.ndarray:
    return space.oswald_interpolate(coeffs)


def cell_volume_rule(space: DGSpace, pos: int, degree=None):
    degree = 2 * space.degree + 2 if degree is None else degree
    return volume_quadrature(space.mesh, int(space.active.cells[pos]), degree)
