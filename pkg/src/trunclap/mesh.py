"""Structured triangulations of rectangles and P1 field primitives.

Vertices are numbered row-major, ``k = j * (nx + 1) + i`` with ``i`` running
along x. Each grid cell is split by one diagonal, alternating direction in a
checkerboard pattern, so every element is a right triangle and gradients of
the linear interpolant are constant per element.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class MeshError(ValueError):
    """Invalid mesh resolution, geometry or mismatched field."""


@dataclass(frozen=True, eq=False)
class Mesh:
    nx: int
    ny: int
    rect: tuple[float, float, float, float]
    vertices: np.ndarray = field(repr=False)
    elements: np.ndarray = field(repr=False)
    boundary_mask: np.ndarray = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def dx(self) -> float:
        return (self.rect[2] - self.rect[0]) / self.nx

    @property
    def dy(self) -> float:
        return (self.rect[3] - self.rect[1]) / self.ny

    @property
    def h(self) -> float:
        return max(self.dx, self.dy)

    @property
    def shape(self) -> tuple[int, int]:
        """Grid shape of a vertex array, ``(ny + 1, nx + 1)``."""
        return (self.ny + 1, self.nx + 1)

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.elements]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def shape_gradients(self) -> np.ndarray:
        """(E, 3, 2) gradients of the three hat functions on each element."""
        p = self.vertices[self.elements]
        twice_area = 2.0 * self.signed_areas
        out = np.empty((self.n_elements, 3, 2))
        for k in range(3):
            a = p[:, (k + 1) % 3]
            b = p[:, (k + 2) % 3]
            out[:, k, 0] = (a[:, 1] - b[:, 1]) / twice_area
            out[:, k, 1] = (b[:, 0] - a[:, 0]) / twice_area
        return out

    @cached_property
    def grad_ops(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Sparse (E, N) maps from vertex values to element gradient components."""
        rows = np.repeat(np.arange(self.n_elements), 3)
        cols = self.elements.ravel()
        g = self.shape_gradients
        shape = (self.n_elements, self.n_vertices)
        dx = sp.csr_matrix((g[:, :, 0].ravel(), (rows, cols)), shape=shape)
        dy = sp.csr_matrix((g[:, :, 1].ravel(), (rows, cols)), shape=shape)
        return dx, dy

    @cached_property
    def abs_grad_ops(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        dx, dy = self.grad_ops
        return abs(dx), abs(dy)

    @cached_property
    def lumped_areas(self) -> np.ndarray:
        """Vertex masses: each element gives a third of its area to each corner."""
        return np.bincount(
            self.elements.ravel(),
            weights=np.repeat(self.areas / 3.0, 3),
            minlength=self.n_vertices,
        )

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        dx, dy = self.grad_ops
        a = sp.diags(self.areas)
        return (dx.T @ a @ dx + dy.T @ a @ dy).tocsr()

    @cached_property
    def vertex_elements(self) -> sp.csr_matrix:
        """(N, E) incidence matrix, 1 where the vertex is a corner of the element."""
        rows = self.elements.ravel()
        cols = np.repeat(np.arange(self.n_elements), 3)
        return sp.csr_matrix(
            (np.ones(rows.size), (rows, cols)),
            shape=(self.n_vertices, self.n_elements),
        )

    @property
    def x(self) -> np.ndarray:
        return self.vertices[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.vertices[:, 1]

    def vertex_index(self, i: int, j: int) -> int:
        return j * (self.nx + 1) + i

    def field(self, values) -> "ScalarField":
        return ScalarField(self, values)

    def interpolate(self, func) -> "ScalarField":
        """Nodal interpolant of ``func(x, y)`` (vectorized callable)."""
        return ScalarField(self, np.asarray(func(self.x, self.y), dtype=float) + np.zeros(self.n_vertices))

    def same_grid(self, other: "Mesh") -> bool:
        return (
            self is other
            or (self.nx, self.ny, tuple(self.rect)) == (other.nx, other.ny, tuple(other.rect))
        )


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One finite real value per mesh vertex."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size != self.mesh.n_vertices:
            raise MeshError(
                f"field has {values.size} values, mesh has {self.mesh.n_vertices} vertices"
            )
        if not np.all(np.isfinite(values)):
            raise MeshError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def grid(self) -> np.ndarray:
        return self.values.reshape(self.mesh.shape)

    def __add__(self, other):
        other = other.values if isinstance(other, ScalarField) else other
        return ScalarField(self.mesh, self.values + other)

    def __sub__(self, other):
        other = other.values if isinstance(other, ScalarField) else other
        return ScalarField(self.mesh, self.values - other)

    def __len__(self):
        return self.values.size


def as_values(field, mesh: Mesh | None = None) -> np.ndarray:
    """Vertex values of a ScalarField or plain array, checked against ``mesh``."""
    if isinstance(field, ScalarField):
        if mesh is not None and not mesh.same_grid(field.mesh):
            raise MeshError("field lives on a different mesh")
        return field.values
    values = np.asarray(field, dtype=float).reshape(-1)
    if mesh is not None and values.size != mesh.n_vertices:
        raise MeshError(f"expected {mesh.n_vertices} values, got {values.size}")
    return values


def build_mesh(nx: int, ny: int, rect=(0.0, 0.0, 1.0, 1.0)) -> Mesh:
    """Alternating-diagonal triangulation of ``rect = (x0, y0, x1, y1)``.

    Produces ``(nx + 1) * (ny + 1)`` vertices and ``2 * nx * ny`` triangles,
    all counter-clockwise.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"invalid resolution nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    x0, y0, x1, y1 = (float(v) for v in rect)
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate rectangle {rect}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    v00 = J * (nx + 1) + I
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    even = (I + J) % 2 == 0
    t1 = np.where(even[:, None], np.column_stack([v00, v10, v11]), np.column_stack([v00, v10, v01]))
    t2 = np.where(even[:, None], np.column_stack([v00, v11, v01]), np.column_stack([v10, v11, v01]))
    elements = np.empty((2 * nx * ny, 3), dtype=np.int64)
    elements[0::2] = t1
    elements[1::2] = t2

    gi, gj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
    boundary = ((gi == 0) | (gi == nx) | (gj == 0) | (gj == ny)).ravel()
    for arr in (vertices, elements, boundary):
        arr.setflags(write=False)
    return Mesh(nx, ny, (x0, y0, x1, y1), vertices, elements, boundary)


def element_gradients(mesh: Mesh, field) -> np.ndarray:
    """(E, 2) constant gradients of the linear interpolant, one row per element."""
    u = as_values(field, mesh)
    dx, dy = mesh.grad_ops
    return np.column_stack([dx @ u, dy @ u])


def element_gradient(mesh: Mesh, field, element: int) -> np.ndarray:
    if not 0 <= element < mesh.n_elements:
        raise IndexError(f"element {element} out of range [0, {mesh.n_elements})")
    u = as_values(field, mesh)
    return u[mesh.elements[element]] @ mesh.shape_gradients[element]


def geometry_stats(mesh: Mesh, field) -> dict:
    """Diameter and area of the rectangle, area-weighted mean of the interpolant."""
    u = as_values(field, mesh)
    x0, y0, x1, y1 = mesh.rect
    area = (x1 - x0) * (y1 - y0)
    # the mean of a linear function on a triangle is the mean of its vertex values
    integral = float(np.sum(mesh.areas * u[mesh.elements].mean(axis=1)))
    return {"diameter": float(np.hypot(x1 - x0, y1 - y0)), "area": area, "mean": integral / area}


def write_field(path, field: ScalarField) -> None:
    """Text dump: ``FIELD nx ny x0 y0 x1 y1`` then one value per line, row-major."""
    m = field.mesh
    lines = ["FIELD %d %d %s %s %s %s" % ((m.nx, m.ny) + tuple(repr(float(v)) for v in m.rect))]
    lines.extend(repr(float(v)) for v in field.values)
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path) -> ScalarField:
    lines = Path(path).read_text().split()
    if not lines or lines[0] != "FIELD":
        raise MeshError(f"{path}: not a field dump")
    nx, ny = int(lines[1]), int(lines[2])
    rect = tuple(float(v) for v in lines[3:7])
    mesh = build_mesh(nx, ny, rect)
    values = np.array([float(v) for v in lines[7:]])
    return ScalarField(mesh, values)
