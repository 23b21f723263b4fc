"""Uniform cubic B-spline deformation fields on a padded control grid.

Control point (a, b) of an (n_cx, n_cy) grid sits at pixel ((a-1) n_x, (b-1) n_y):
one ghost row/column pads each side so that for pixel x the window
a = floor(x/n_x) - 1 + 1, ..., +3 stays inside the grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class SplineBoundaryError(ValueError):
    pass


def bspline_basis(u):
    """The four uniform cubic B-spline weights at offset u in [0, 1)."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr < 0) or np.any(u_arr >= 1):
        raise ValueError("u must lie in [0, 1)")
    u2, u3 = u_arr * u_arr, u_arr**3
    b = ((1 - u_arr) ** 3 / 6.0,
         (3 * u3 - 6 * u2 + 4) / 6.0,
         (-3 * u3 + 3 * u2 + 3 * u_arr + 1) / 6.0,
         u3 / 6.0)
    if u_arr.ndim == 0:
        return tuple(float(v) for v in b)
    return np.stack(b, axis=-1)


@dataclass
class SplineField:
    """Displacement field; ``weights`` is [Vec(q_x); Vec(q_y)] with row-major Vec."""

    grid: tuple[int, int]
    spacing: tuple[float, float]
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        n_cx, n_cy = (int(g) for g in self.grid)
        if n_cx < 4 or n_cy < 4:
            raise ValueError("control grid must be at least 4 x 4 to hold one spline window")
        if min(self.spacing) < 1:
            raise ValueError("spacings must be at least one pixel")
        self.grid = (n_cx, n_cy)
        self.spacing = (float(self.spacing[0]), float(self.spacing[1]))
        if self.weights is None:
            self.weights = np.zeros(self.size)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.size,):
            raise ValueError(f"weights must have length {self.size}")

    @classmethod
    def covering(cls, width: int, height: int, grid: tuple[int, int] = (12, 7)) -> "SplineField":
        """Smallest integer spacings that let ``grid`` cover a width x height image."""
        # pixel coordinates reach width - 1, which must stay below (n - 3) * spacing
        sx = (width - 1) // (grid[0] - 3) + 1
        sy = (height - 1) // (grid[1] - 3) + 1
        return cls(grid, (sx, sy))

    @property
    def n_points(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def size(self) -> int:
        return 2 * self.n_points

    def planes(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.n_points
        return self.weights[:n].reshape(self.grid), self.weights[n:].reshape(self.grid)

    def with_weights(self, weights) -> "SplineField":
        return SplineField(self.grid, self.spacing, np.array(weights, dtype=float))

    def support(self) -> tuple[float, float]:
        """Exclusive upper bounds on x and y that the grid can evaluate."""
        return (self.grid[0] - 3) * self.spacing[0], (self.grid[1] - 3) * self.spacing[1]


def _axis_weights(coord: np.ndarray, spacing: float, n_ctrl: int, axis: str):
    t = coord / spacing
    cell = np.floor(t)
    u = t - cell
    first = cell.astype(int)  # padded index of the window start, floor(x/n) - 1 + 1
    if np.any(coord < 0) or np.any(first + 3 > n_ctrl - 1):
        raise SplineBoundaryError(f"{axis} coordinate outside the padded control grid support")
    return first, bspline_basis(np.clip(u, 0.0, np.nextafter(1.0, 0.0)))


def basis_matrix(field_: SplineField, x, y) -> sp.csr_matrix:
    """Sparse (N, n_cx*n_cy) matrix with 16 tensor-product weights per point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n_cx, n_cy = field_.grid
    ix, bx = _axis_weights(x, field_.spacing[0], n_cx, "x")
    iy, by = _axis_weights(y, field_.spacing[1], n_cy, "y")
    offs = np.arange(4)
    cols_x = ix[:, None] + offs  # (N, 4)
    cols_y = iy[:, None] + offs
    cols = (cols_x[:, :, None] * n_cy + cols_y[:, None, :]).reshape(len(x), 16)
    vals = (bx[:, :, None] * by[:, None, :]).reshape(len(x), 16)
    rows = np.repeat(np.arange(len(x)), 16)
    return sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(len(x), field_.n_points))


def deform(field_: SplineField, x, y):
    """Displacement (phi_x, phi_y) at pixel coordinates (x, y)."""
    scalar = np.ndim(x) == 0 and np.ndim(y) == 0
    bmat = basis_matrix(field_, x, y)
    n = field_.n_points
    phi_x = bmat @ field_.weights[:n]
    phi_y = bmat @ field_.weights[n:]
    if scalar:
        return float(phi_x[0]), float(phi_y[0])
    return phi_x, phi_y


def _difference_operator(n_cx: int, n_cy: int, axis: int) -> sp.csr_matrix:
    """Forward differences along one grid axis, dropping edges with no neighbour."""
    idx = np.arange(n_cx * n_cy).reshape(n_cx, n_cy)
    if axis == 0:
        a, b = idx[:-1, :].ravel(), idx[1:, :].ravel()
    else:
        a, b = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    m = len(a)
    rows = np.concatenate([np.arange(m), np.arange(m)])
    cols = np.concatenate([b, a])
    vals = np.concatenate([np.ones(m), -np.ones(m)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, n_cx * n_cy))


def membrane_precision(grid: tuple[int, int], planes: int = 2) -> sp.csr_matrix:
    """Membrane-energy precision: block-diagonal D_h^T D_h + D_v^T D_v per displacement plane."""
    n_cx, n_cy = (int(g) for g in grid)
    if n_cx < 1 or n_cy < 1 or n_cx * n_cy < 2:
        raise ValueError(f"degenerate control grid {grid}")
    blocks = []
    for axis in (0, 1):
        if (n_cx if axis == 0 else n_cy) > 1:
            d = _difference_operator(n_cx, n_cy, axis)
            blocks.append(d.T @ d)
    plane = sum(blocks[1:], blocks[0])
    return sp.block_diag([plane] * planes, format="csr")
