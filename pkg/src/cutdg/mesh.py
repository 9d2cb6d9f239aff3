"""Cartesian background meshes and the active (cut) sub-mesh."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np


class EmptyActiveMeshError(ValueError):
    """The discrete surface does not intersect any background cell."""


@dataclass(frozen=True)
class BackgroundMesh:
    lower: np.ndarray
    upper: np.ndarray
    counts: tuple[int, int, int]
    shift: np.ndarray = field(default_factory=lambda: np.zeros(3))
    allow_anisotropic: bool = False

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "shift", np.asarray(self.shift, dtype=float))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if lower.shape != (3,) or upper.shape != (3,) or len(self.counts) != 3:
            raise ValueError("bounds and counts must be three-dimensional")
        if np.any(upper <= lower):
            raise ValueError("degenerate bounding box")
        if min(self.counts) < 1:
            raise ValueError("subdivision counts must be >= 1")
        hs = self.cell_size
        if not self.allow_anisotropic and not np.allclose(hs, hs[0], rtol=1e-10, atol=0.0):
            raise ValueError(f"anisotropic cells {hs}; pass allow_anisotropic=True")

    @property
    def cell_size(self) -> np.ndarray:
        return (self.upper - self.lower) / np.array(self.counts)

    @property
    def h(self) -> float:
        return float(self.cell_size.max())

    @property
    def origin(self) -> np.ndarray:
        return self.lower + self.shift

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.counts
        return nx * ny * nz

    @property
    def vertex_counts(self) -> tuple[int, int, int]:
        return tuple(c + 1 for c in self.counts)

    def cell_index(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk)
        nx, ny, nz = self.counts
        return (ijk[..., 0] * ny + ijk[..., 1]) * nz + ijk[..., 2]

    def cell_lattice(self, index) -> np.ndarray:
        index = np.asarray(index)
        nx, ny, nz = self.counts
        return np.stack([index // (ny * nz), (index // nz) % ny, index % nz], axis=-1)

    def cell_lower(self, index) -> np.ndarray:
        return self.origin + self.cell_lattice(index) * self.cell_size

    def cell_center(self, index) -> np.ndarray:
        return self.cell_lower(index) + 0.5 * self.cell_size

    def vertex_index(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk)
        vx, vy, vz = self.vertex_counts
        return (ijk[..., 0] * vy + ijk[..., 1]) * vz + ijk[..., 2]

    def vertices(self) -> np.ndarray:
        """All lattice vertices in lexicographic order, shape ``(nv, 3)``."""
        axes = [self.origin[a] + np.arange(self.counts[a] + 1) * self.cell_size[a] for a in range(3)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([g.ravel() for g in grid])

    def locate(self, points) -> np.ndarray:
        """Background cell index containing each point (clamped to the box)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        rel = (points - self.origin) / self.cell_size
        ijk = np.clip(np.floor(rel).astype(int), 0, np.array(self.counts) - 1)
        return self.cell_index(ijk)


def build_grid(bounds, subdivisions, allow_anisotropic: bool = False) -> BackgroundMesh:
    """``bounds`` is ``(lower, upper)``; each may be a scalar or a 3-vector."""
    lower, upper = bounds
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (3,)).copy()
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (3,)).copy()
    counts = tuple(np.broadcast_to(np.asarray(subdivisions), (3,)).tolist())
    return BackgroundMesh(lower, upper, counts, allow_anisotropic=allow_anisotropic)


def refine_counts(level: int, base_counts) -> tuple[int, int, int]:
    """Counts ``floor(2**(level/2)) * base`` (floor taken before multiplying)."""
    if level < 0:
        raise ValueError("level must be >= 0")
    factor = math.isqrt(2**level)
    return tuple(int(factor * c) for c in base_counts)


def shift_mesh(mesh: BackgroundMesh, delta: float) -> BackgroundMesh:
    """Translate the mesh by ``delta * h / sqrt(3) * (1, 1, 1)``; ``|shift| = delta * h``."""
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must lie in [0, 1)")
    s = delta * mesh.h / math.sqrt(3.0) * np.ones(3)
    return BackgroundMesh(mesh.lower, mesh.upper, mesh.counts, shift=mesh.shift + s,
                          allow_anisotropic=mesh.allow_anisotropic)


@dataclass(frozen=True)
class ActiveMesh:
    """Cut cells and the faces shared by two of them.

    ``faces`` rows are ``(pos_plus, pos_minus, axis)`` where positions index
    ``cells`` and the face normal ``e_axis`` points from the plus to the minus
    cell, i.e. the minus cell is the upper neighbour along ``axis``.
    """

    background: BackgroundMesh
    cells: np.ndarray
    faces: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def h(self) -> float:
        return self.background.h

    def position(self, cell_index) -> np.ndarray:
        """Map background cell indices to active positions (-1 if inactive)."""
        lookup = np.full(self.background.n_cells, -1, dtype=np.int64)
        lookup[self.cells] = np.arange(self.n_cells)
        return lookup[np.asarray(cell_index)]

    def neighbor_counts(self) -> np.ndarray:
        counts = np.zeros(self.n_cells, dtype=np.int64)
        np.add.at(counts, self.faces[:, 0], 1)
        np.add.at(counts, self.faces[:, 1], 1)
        return counts

    def adjacency(self):
        import scipy.sparse as sp

        n = self.n_cells
        f = self.faces
        data = np.ones(2 * len(f))
        rows = np.concatenate([f[:, 0], f[:, 1]])
        cols = np.concatenate([f[:, 1], f[:, 0]])
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    def n_components(self) -> int:
        from scipy.sparse.csgraph import connected_components

        return connected_components(self.adjacency(), directed=False)[0]

    def face_plane(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis and coordinate of the plane containing each face."""
        bg = self.background
        axis = self.faces[:, 2]
        upper_corner = bg.cell_lower(self.cells[self.faces[:, 0]]) + bg.cell_size
        return axis, upper_corner[np.arange(len(axis)), axis]


def extract_active_mesh(mesh: BackgroundMesh, active_mask) -> ActiveMesh:
    """Keep background cells flagged as carrying a nonempty surface patch.

    ``active_mask`` is a boolean array over background cells, normally taken
    from :func:`cutdg.geometry.reconstruct_surface` so that the notion of an
    active cell cannot drift from the reconstruction.
    """
    active_mask = np.asarray(active_mask, dtype=bool)
    if active_mask.shape != (mesh.n_cells,):
        raise ValueError("active mask must cover every background cell")
    cells = np.flatnonzero(active_mask)
    if cells.size == 0:
        raise EmptyActiveMeshError("the surface does not cut the background mesh")
    lookup = np.full(mesh.n_cells, -1, dtype=np.int64)
    lookup[cells] = np.arange(cells.size)
    ijk = mesh.cell_lattice(cells)
    faces = []
    for axis in range(3):
        nbr = ijk.copy()
        nbr[:, axis] += 1
        inside = nbr[:, axis] < mesh.counts[axis]
        plus = np.flatnonzero(inside)
        minus = lookup[mesh.cell_index(nbr[inside])]
        keep = minus >= 0
        faces.append(np.column_stack([plus[keep], minus[keep], np.full(keep.sum(), axis)]))
    faces = np.concatenate(faces).astype(np.int64)
    order = np.lexsort((faces[:, 2], faces[:, 1], faces[:, 0]))
    return ActiveMesh(mesh, cells, faces[order])


def check_resolution(h: float, curvature: float) -> None:
    if curvature > 0 and h > 1.0 / curvature:
        warnings.warn(f"mesh size h={h:.3g} exceeds the curvature radius {1 / curvature:.3g}",
                      RuntimeWarning, stacklevel=2)
