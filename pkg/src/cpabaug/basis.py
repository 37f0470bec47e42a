"""Orthonormal basis for continuous piecewise-affine velocity fields.

A piecewise-affine field on a tessellation with ``N`` triangles is stored as
an affine stack of length ``D = 6 * N``: the row-major 2x3 matrices of all
triangles, concatenated. The continuous fields that vanish on the boundary
form the null space of a linear constraint matrix.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .tessellation import Tessellation, build_crossed_tessellation, locate

SINGULAR_VALUE_RTOL = 1e-10


@dataclass(frozen=True)
class CpaBasis:
    tess: Tessellation
    B: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return self.B.shape[1]

    @property
    def D(self) -> int:
        return self.B.shape[0]

    def affine_stack(self, theta) -> np.ndarray:
        """Per-triangle affine matrices for ``theta``, shape (n_triangles, 2, 3)."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.d,):
            raise ValueError(f"theta must have shape ({self.d},), got {theta.shape}")
        return (self.B @ theta).reshape(-1, 2, 3)

    def velocity_at(self, theta, p) -> np.ndarray:
        return velocity_at(self, theta, p)


def build_constraint_matrix(tess: Tessellation) -> np.ndarray:
    """Rows forcing continuity at shared vertices and zero velocity on the boundary."""
    n_tri = tess.n_triangles
    incident: list[list[int]] = [[] for _ in range(tess.n_vertices)]
    for t, tri in enumerate(tess.triangles):
        for v in tri:
            incident[v].append(t)

    rows = []
    for v, tris in enumerate(incident):
        h = np.array([tess.vertices[v, 0], tess.vertices[v, 1], 1.0])
        if tess.interior_vertex_flags[v]:
            for t1, t2 in itertools.combinations(tris, 2):
                for r in range(2):
                    row = np.zeros(6 * n_tri)
                    row[6 * t1 + 3 * r:6 * t1 + 3 * r + 3] = h
                    row[6 * t2 + 3 * r:6 * t2 + 3 * r + 3] = -h
                    rows.append(row)
        else:
            # zero at the vertex for every incident triangle already implies agreement
            for t in tris:
                for r in range(2):
                    row = np.zeros(6 * n_tri)
                    row[6 * t + 3 * r:6 * t + 3 * r + 3] = h
                    rows.append(row)
    return np.array(rows)


def null_space_basis(L: np.ndarray, tess: Tessellation | None = None) -> CpaBasis:
    """Orthonormal null-space basis of ``L`` via SVD.

    Singular values below ``1e-10`` times the largest count as zero. Each
    column is signed so its first non-negligible entry is positive.
    """
    _, s, vt = np.linalg.svd(L, full_matrices=True)
    tol = SINGULAR_VALUE_RTOL * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    B = vt[rank:].T.copy()
    if B.shape[1] == 0:
        raise ValueError("constraint matrix has an empty null space")
    for j in range(B.shape[1]):
        col = B[:, j]
        first = np.flatnonzero(np.abs(col) > 1e-12)[0]
        if col[first] < 0:
            B[:, j] = -col
    B.setflags(write=False)
    return CpaBasis(tess, B)


def build_basis(nx: int = 4, ny: int = 4) -> CpaBasis:
    """Crossed ``nx`` x ``ny`` tessellation and its CPA velocity basis."""
    tess = build_crossed_tessellation(nx, ny)
    return null_space_basis(build_constraint_matrix(tess), tess)


def velocity_at(basis: CpaBasis, theta, p) -> np.ndarray:
    A = basis.affine_stack(theta)[locate(basis.tess, p)]
    return A[:, :2] @ np.asarray(p, dtype=float) + A[:, 2]
