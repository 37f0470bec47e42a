"""Crossed triangular tessellation of the unit square."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class OutOfDomainError(ValueError):
    """Raised when a point lies outside the closed unit square."""


@dataclass(frozen=True)
class Tessellation:
    """Regular ``nx`` x ``ny`` grid, every cell split into 4 triangles at its center.

    Triangle ``4 * (cy * nx + cx) + k`` is the bottom (k=0), right (1), top (2)
    or left (3) triangle of cell ``(cx, cy)``. Vertices are the grid corners
    followed by the cell centers.
    """

    nx: int
    ny: int
    vertices: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    centroids: np.ndarray = field(repr=False)
    interior_vertex_flags: np.ndarray = field(repr=False)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_interior_vertices(self) -> int:
        return int(self.interior_vertex_flags.sum())

    def triangle_areas(self) -> np.ndarray:
        """Signed areas; strictly positive for counter-clockwise triangles."""
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def barycentric(self, t: int, p) -> np.ndarray:
        a, b, c = self.vertices[self.triangles[t]]
        m = np.array([[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]])
        l1, l2 = np.linalg.solve(m, np.asarray(p, dtype=float) - a)
        return np.array([1.0 - l1 - l2, l1, l2])

    def locate(self, p) -> int:
        return locate(self, p)


def build_crossed_tessellation(nx: int, ny: int) -> Tessellation:
    """Build the crossed tessellation with ``4 * nx * ny`` triangles.

    Parameters
    ----------
    nx, ny : int
        Number of square cells along x and y. Must be positive.

    Returns
    -------
    Tessellation
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be positive integers, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)

    gx, gy = np.meshgrid(np.arange(nx + 1) / nx, np.arange(ny + 1) / ny)
    corners = np.column_stack([gx.ravel(), gy.ravel()])
    cx, cy = np.meshgrid((np.arange(nx) + 0.5) / nx, (np.arange(ny) + 0.5) / ny)
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    vertices = np.vstack([corners, centers])

    n_corners = (nx + 1) * (ny + 1)
    triangles = np.empty((4 * nx * ny, 3), dtype=np.int64)
    for j in range(ny):
        for i in range(nx):
            c00 = j * (nx + 1) + i
            c10 = c00 + 1
            c01 = c00 + nx + 1
            c11 = c01 + 1
            m = n_corners + j * nx + i
            base = 4 * (j * nx + i)
            triangles[base:base + 4] = [
                (c00, c10, m),
                (c10, c11, m),
                (c11, c01, m),
                (c01, c00, m),
            ]

    centroids = vertices[triangles].mean(axis=1)
    on_boundary = (
        (vertices[:, 0] == 0.0) | (vertices[:, 0] == 1.0)
        | (vertices[:, 1] == 0.0) | (vertices[:, 1] == 1.0)
    )
    for arr in (vertices, triangles, centroids, on_boundary):
        arr.setflags(write=False)
    return Tessellation(nx, ny, vertices, triangles, centroids, ~on_boundary)


def locate(tess: Tessellation, p) -> int:
    """Index of the triangle containing ``p``.

    Points on shared edges or vertices resolve to the lowest incident
    triangle index.
    """
    x, y = float(p[0]), float(p[1])
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise OutOfDomainError(f"point ({x}, {y}) is outside the unit square")
    nx, ny = tess.nx, tess.ny
    cx = min(int(x * nx), nx - 1)
    cy = min(int(y * ny), ny - 1)
    u = x * nx - cx
    w = y * ny - cy
    # the lower-indexed cell wins on shared cell boundaries (rows before columns)
    if w == 0.0 and cy > 0:
        cy -= 1
        w = 1.0
    if u == 0.0 and cx > 0:
        cx -= 1
        u = 1.0
    return 4 * (cy * nx + cx) + _triangle_in_cell(u, w)


def _triangle_in_cell(u: float, w: float) -> int:
    d1 = w - u
    d2 = u + w - 1.0
    if d1 <= 0.0 and d2 <= 0.0:
        return 0
    if d1 <= 0.0:
        return 1
    if d2 >= 0.0:
        return 2
    return 3


def pixel_centers(height: int, width: int) -> np.ndarray:
    """Domain coordinates of pixel centers, shape (height * width, 2), row-major."""
    jj, ii = np.meshgrid(np.arange(width), np.arange(height))
    return np.column_stack([(jj.ravel() + 0.5) / width, (ii.ravel() + 0.5) / height])
