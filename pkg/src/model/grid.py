"""
Structured cell-centred mesh and the discrete differential operators of the model.

All fields are numpy arrays whose trailing ``dim`` axes are the cell axes:
scalar fields ``(*cells)``, displacements ``(n, *cells)``, concentrations and
chemical potentials ``(N, *cells)``, strain/stress tensors ``(n, n, *cells)``.

Differences are one-sided with ghost cells: the ghost value is the reflection
of the boundary cell at Neumann faces and ``2 b - f`` at Dirichlet faces, so
the face value interpolates the boundary datum ``b``. A "side combination"
picks forward (+1) or backward (-1) differences per axis; gradient energies
are averaged over all ``2**dim`` combinations.
"""
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from itertools import product
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union
import logging

import numpy as np
import scipy.sparse as sp

from .errors import ConstraintViolation, FieldShapeError, GridError

logger = logging.getLogger(__name__)

AXES = "xy"
FACES = ("x-", "x+", "y-", "y+")

Side = Tuple[int, ...]


def face_name(axis: int, side: int) -> str:
    """Name of the boundary face reached by a one-sided difference.

    Args:
        axis: Cell axis (0 for x, 1 for y)
        side: +1 for the upper face, -1 for the lower face

    Returns:
        Face name such as ``"x+"``
    """
    return f"{AXES[axis]}{'+' if side > 0 else '-'}"


@dataclass(frozen=True)
class Grid:
    """Uniform box mesh with boundary tagging.

    Attributes:
        dim: Space dimension n (1 or 2)
        cells: Cell count per axis
        extent: Physical length per axis
        dirichlet: Dirichlet flag per face, in ``FACES`` order
    """

    dim: int
    cells: Tuple[int, ...]
    extent: Tuple[float, ...]
    dirichlet: Tuple[bool, ...]

    @cached_property
    def faces(self) -> Tuple[str, ...]:
        return FACES[: 2 * self.dim]

    @cached_property
    def spacing(self) -> np.ndarray:
        return np.asarray(self.extent, dtype=float) / np.asarray(self.cells, dtype=float)

    @cached_property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    @cached_property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    @cached_property
    def sides(self) -> Tuple[Side, ...]:
        """All side combinations, each entry -1 (backward) or +1 (forward) per axis."""
        return tuple(product((-1, 1), repeat=self.dim))

    @cached_property
    def dirichlet_faces(self) -> Tuple[str, ...]:
        return tuple(f for f, flag in zip(self.faces, self.dirichlet) if flag)

    def is_dirichlet(self, face: str) -> bool:
        return bool(self.dirichlet[self.faces.index(face)])

    def centers(self) -> Tuple[np.ndarray, ...]:
        """Cell-centre coordinates, one array of shape ``cells`` per axis."""
        axes = [(np.arange(m) + 0.5) * h for m, h in zip(self.cells, self.spacing)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def face_coordinates(self, face: str) -> Tuple[np.ndarray, ...]:
        """Coordinates of the face midpoints of one boundary face.

        Returns:
            One array per axis with the face shape (cells with the normal axis removed)
        """
        axis = AXES.index(face[0])
        coords = []
        for d in range(self.dim):
            if d == axis:
                continue
            coords.append((np.arange(self.cells[d]) + 0.5) * self.spacing[d])
        mesh = np.meshgrid(*coords, indexing="ij") if coords else []
        position = 0.0 if face[1] == "-" else self.extent[axis]
        shape = self.face_shape(face)
        out = []
        k = 0
        for d in range(self.dim):
            if d == axis:
                out.append(np.full(shape, position))
            else:
                out.append(mesh[k])
                k += 1
        return tuple(out)

    def face_shape(self, face: str) -> Tuple[int, ...]:
        axis = AXES.index(face[0])
        return tuple(m for d, m in enumerate(self.cells) if d != axis)

    # ------------------------------------------------------------------
    # sparse one-sided differences
    # ------------------------------------------------------------------
    @lru_cache(maxsize=None)
    def difference(self, axis: int, side: int, dirichlet: bool = False) -> sp.csr_matrix:
        """One-sided difference along ``axis`` acting on flattened cell vectors.

        Args:
            axis: Cell axis
            side: +1 forward, -1 backward
            dirichlet: Use the Dirichlet ghost rule on the grid's Dirichlet faces;
                otherwise every face reflects (homogeneous Neumann)

        Returns:
            Sparse matrix of size ``n_cells x n_cells``
        """
        m = self.cells[axis]
        h = self.spacing[axis]
        pinned = dirichlet and self.is_dirichlet(face_name(axis, side))
        main = np.zeros(m)
        if side > 0:
            main[:-1] = -1.0 / h
            if pinned:
                main[-1] = -2.0 / h
            one_d = sp.diags([main, np.full(m - 1, 1.0 / h)], [0, 1], shape=(m, m))
        else:
            main[1:] = 1.0 / h
            if pinned:
                main[0] = 2.0 / h
            one_d = sp.diags([main, np.full(m - 1, -1.0 / h)], [0, -1], shape=(m, m))
        blocks = [sp.identity(c, format="csr") for c in self.cells]
        blocks[axis] = one_d
        op = blocks[0]
        for b in blocks[1:]:
            op = sp.kron(op, b)
        return sp.csr_matrix(op)

    @lru_cache(maxsize=None)
    def central_difference(self, axis: int) -> sp.csr_matrix:
        """Central difference with reflection ghosts (mean of both one-sided operators)."""
        return sp.csr_matrix(0.5 * (self.difference(axis, 1) + self.difference(axis, -1)))

    @lru_cache(maxsize=None)
    def laplacian(self) -> sp.csr_matrix:
        """Compact Neumann Laplacian L (positive semidefinite).

        ``cell_volume * f @ L @ g`` equals the side-averaged discrete
        ``int grad f . grad g``; constants span its kernel.
        """
        ops = [
            self.difference(d, s).T @ self.difference(d, s)
            for d in range(self.dim)
            for s in (-1, 1)
        ]
        return sp.csr_matrix(0.5 * sum(ops))

    @lru_cache(maxsize=None)
    def scalar_gradient_operator(self, side: Side) -> sp.csr_matrix:
        """Neumann gradient for one side combination, rows ordered (axis, cell)."""
        return sp.csr_matrix(sp.vstack([self.difference(d, side[d]) for d in range(self.dim)]))

    @lru_cache(maxsize=None)
    def displacement_gradient_operator(self, side: Side) -> sp.csr_matrix:
        """Map flattened u ``(n, cells)`` to flattened grad u ``(n, n, cells)``.

        Entry ``[a, d]`` of the result is the derivative of component ``a``
        along axis ``d``; Dirichlet faces use the ghost rule.
        """
        n = self.dim
        blocks = [[None] * n for _ in range(n * n)]
        for a in range(n):
            for d in range(n):
                blocks[a * n + d][a] = self.difference(d, side[d], dirichlet=True)
        return sp.csr_matrix(sp.bmat(blocks))

    def dirichlet_offset(self, side: Side, boundary: "BoundaryData") -> np.ndarray:
        """Affine part of the displacement gradient coming from boundary data.

        Returns:
            Array ``(n, n, *cells)`` to add to ``displacement_gradient_operator(side) @ u``
        """
        n = self.dim
        out = np.zeros((n, n) + self.cells)
        for d in range(n):
            face = face_name(d, side[d])
            if not self.is_dirichlet(face):
                continue
            b = boundary.face(face)
            index = [slice(None)] * (n + 1)
            index[1 + d] = -1 if side[d] > 0 else 0
            sign = 1.0 if side[d] > 0 else -1.0
            out[(slice(None), d) + tuple(index[1:])] = sign * 2.0 * b / self.spacing[d]
        return out

    def side_gradient(self, f: np.ndarray, side: Side) -> np.ndarray:
        """Neumann one-sided gradient of a (multi-component) cell field.

        Args:
            f: Array ``(..., *cells)``
            side: Side combination

        Returns:
            Array ``(..., dim, *cells)``
        """
        lead = f.shape[: f.ndim - self.dim]
        flat = f.reshape((-1, self.n_cells))
        g = (self.scalar_gradient_operator(side) @ flat.T).T
        return g.reshape(lead + (self.dim,) + self.cells)

    def side_gradient_adjoint(self, g: np.ndarray, side: Side) -> np.ndarray:
        """Transpose of ``side_gradient``: ``(..., dim, *cells)`` to ``(..., *cells)``."""
        lead = g.shape[: g.ndim - self.dim - 1]
        flat = g.reshape((-1, self.dim * self.n_cells))
        f = (self.scalar_gradient_operator(side).T @ flat.T).T
        return f.reshape(lead + self.cells)

    def displacement_gradient(self, u: np.ndarray, side: Side, boundary: "BoundaryData") -> np.ndarray:
        """One-sided grad u (with Dirichlet ghosts) for a side combination, shape ``(n, n, *cells)``."""
        n = self.dim
        flat = self.displacement_gradient_operator(side) @ u.reshape(-1)
        return flat.reshape((n, n) + self.cells) + self.dirichlet_offset(side, boundary)

    def displacement_gradient_adjoint(self, tau: np.ndarray, side: Side) -> np.ndarray:
        """Transpose of the linear part of ``displacement_gradient``."""
        flat = self.displacement_gradient_operator(side).T @ tau.reshape(-1)
        return flat.reshape((self.dim,) + self.cells)

    # ------------------------------------------------------------------
    # checks
    # ------------------------------------------------------------------
    def check_field(self, f: np.ndarray, components: Optional[Sequence[int]] = None, name: str = "field") -> np.ndarray:
        """Validate that ``f`` lives on this grid.

        Args:
            f: Candidate field
            components: Expected leading shape (``()`` for scalar fields)
            name: Field name used in error messages

        Returns:
            ``f`` as a float array
        """
        f = np.asarray(f, dtype=float)
        if f.ndim < self.dim or f.shape[f.ndim - self.dim :] != self.cells:
            raise FieldShapeError(f"{name} has shape {f.shape}, grid cells are {self.cells}")
        if components is not None and tuple(f.shape[: f.ndim - self.dim]) != tuple(components):
            raise FieldShapeError(f"{name} has components {f.shape[: f.ndim - self.dim]}, expected {tuple(components)}")
        if not np.all(np.isfinite(f)):
            raise ConstraintViolation(f"{name} has non-finite entries")
        return f


@dataclass(frozen=True)
class BoundaryData:
    """Displacement data b on the Dirichlet faces at one time.

    Attributes:
        values: Face name -> array ``(n, *face_shape)``
    """

    values: Mapping[str, np.ndarray] = field(default_factory=dict)

    def face(self, name: str) -> np.ndarray:
        if name not in self.values:
            raise GridError(f"missing boundary data on Dirichlet face {name}")
        return self.values[name]

    @classmethod
    def constant(cls, grid: Grid, vectors: Optional[Mapping[str, Sequence[float]]] = None) -> "BoundaryData":
        """Data that is constant along each Dirichlet face (zero where not given)."""
        vectors = vectors or {}
        values: Dict[str, np.ndarray] = {}
        for face in grid.dirichlet_faces:
            vec = np.asarray(vectors.get(face, np.zeros(grid.dim)), dtype=float).reshape((grid.dim,) + (1,) * (grid.dim - 1))
            values[face] = np.broadcast_to(vec, (grid.dim,) + grid.face_shape(face)).copy()
        return cls(values)

    @classmethod
    def affine(cls, grid: Grid, matrix: np.ndarray, shift: Optional[Sequence[float]] = None) -> "BoundaryData":
        """Trace of the affine field ``b(x) = matrix @ x + shift`` on the Dirichlet faces."""
        matrix = np.asarray(matrix, dtype=float).reshape(grid.dim, grid.dim)
        shift = np.zeros(grid.dim) if shift is None else np.asarray(shift, dtype=float)
        values = {}
        for face in grid.dirichlet_faces:
            x = np.stack(grid.face_coordinates(face))
            values[face] = np.einsum("ad,d...->a...", matrix, x) + shift.reshape((grid.dim,) + (1,) * (x.ndim - 1))
        return cls(values)

    def interpolate(self, other: "BoundaryData", weight: float) -> "BoundaryData":
        """Convex combination ``(1 - weight) * self + weight * other``."""
        return BoundaryData({k: (1.0 - weight) * v + weight * other.values[k] for k, v in self.values.items()})


def make_grid(
    dim: int,
    cells: Sequence[int],
    extent: Sequence[float],
    dirichlet_mask: Union[Mapping[str, bool], Sequence[bool], None] = None,
) -> Grid:
    """Build a validated grid.

    Args:
        dim: Space dimension, 1 or 2
        cells: Cells per axis, each at least 2
        extent: Physical length per axis, each positive
        dirichlet_mask: Face name -> flag, or one flag per face in ``FACES`` order;
            faces not mentioned are Neumann (traction free for u)

    Returns:
        The grid
    """
    if dim not in (1, 2):
        raise GridError(f"dim must be 1 or 2, got {dim}")
    cells = tuple(int(c) for c in cells)
    extent = tuple(float(e) for e in extent)
    if len(cells) != dim or len(extent) != dim:
        raise GridError(f"need {dim} cell counts and extents, got {cells} and {extent}")
    if any(c < 2 for c in cells):
        raise GridError(f"at least 2 cells per axis required, got {cells}")
    if any(not np.isfinite(e) or e <= 0 for e in extent):
        raise GridError(f"extent must be positive, got {extent}")
    faces = FACES[: 2 * dim]
    if dirichlet_mask is None:
        flags = (False,) * len(faces)
    elif isinstance(dirichlet_mask, Mapping):
        unknown = set(dirichlet_mask) - set(faces)
        if unknown:
            raise GridError(f"unknown faces {sorted(unknown)} for dim {dim}")
        flags = tuple(bool(dirichlet_mask.get(f, False)) for f in faces)
    else:
        flags = tuple(bool(x) for x in dirichlet_mask)
        if len(flags) != len(faces):
            raise GridError(f"dirichlet mask needs {len(faces)} flags, got {len(flags)}")
    grid = Grid(dim=dim, cells=cells, extent=extent, dirichlet=flags)
    logger.debug(f"grid {cells} spacing {grid.spacing} dirichlet {grid.dirichlet_faces}")
    return grid


def gradient(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Central gradient with reflection ghosts.

    Args:
        f: Field ``(..., *cells)``
        grid: The grid

    Returns:
        Array ``(..., dim, *cells)``
    """
    f = grid.check_field(f)
    lead = f.shape[: f.ndim - grid.dim]
    flat = f.reshape((-1, grid.n_cells))
    parts = [(grid.central_difference(d) @ flat.T).T for d in range(grid.dim)]
    return np.stack(parts, axis=1).reshape(lead + (grid.dim,) + grid.cells)


def divergence(v: np.ndarray, grid: Grid) -> np.ndarray:
    """Negative adjoint of ``gradient`` (odd reflection of the normal component).

    Args:
        v: Field ``(..., dim, *cells)``
        grid: The grid

    Returns:
        Array ``(..., *cells)``
    """
    v = grid.check_field(v)
    if v.ndim < grid.dim + 1 or v.shape[v.ndim - grid.dim - 1] != grid.dim:
        raise FieldShapeError(f"vector field needs {grid.dim} components, got shape {v.shape}")
    lead = v.shape[: v.ndim - grid.dim - 1]
    flat = v.reshape((-1, grid.dim, grid.n_cells))
    out = np.zeros((flat.shape[0], grid.n_cells))
    for d in range(grid.dim):
        out -= (grid.central_difference(d).T @ flat[:, d, :].T).T
    return out.reshape(lead + grid.cells)


def sym_gradient(u: np.ndarray, grid: Grid, boundary: Optional[BoundaryData] = None) -> np.ndarray:
    """Linearised strain e(u) = (grad u + grad u^T) / 2 at cell centres.

    Args:
        u: Displacement ``(n, *cells)``
        grid: The grid
        boundary: Data on the Dirichlet faces; required if the grid has any

    Returns:
        Symmetric tensor field ``(n, n, *cells)``
    """
    u = grid.check_field(u, (grid.dim,), "displacement")
    if boundary is None:
        if grid.dirichlet_faces:
            raise GridError(f"boundary data required on Dirichlet faces {grid.dirichlet_faces}")
        boundary = BoundaryData()
    jac = np.mean([grid.displacement_gradient(u, s, boundary) for s in grid.sides], axis=0)
    return 0.5 * (jac + np.swapaxes(jac, 0, 1))


def integrate(f: np.ndarray, grid: Grid) -> Union[float, np.ndarray]:
    """Midpoint rule over the domain; one value per leading component."""
    f = grid.check_field(f)
    total = f.reshape(f.shape[: f.ndim - grid.dim] + (-1,)).sum(axis=-1) * grid.cell_volume
    return float(total) if np.ndim(total) == 0 else total


def mean(f: np.ndarray, grid: Grid) -> Union[float, np.ndarray]:
    return integrate(f, grid) / grid.volume


def sides_mean(values: Iterable[np.ndarray]) -> np.ndarray:
    """Average of per-side-combination arrays."""
    values = list(values)
    return np.sum(values, axis=0) / len(values)
