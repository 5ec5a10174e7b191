"""Uniform 1D cell-centred grid, difference operators and banded solves.

Cells are centred at x_j = (j + 1/2) dx, j = 0, ..., n-1, on [0, L].  Ghost
values encode the boundary conditions:

* ``NEUMANN_ZERO``   even reflection across the wall face (zero flux),
* ``DIRICHLET_ZERO`` odd extension across the wall face (zero value),
* ``NONE``           second-order one-sided stencils (transported fields).

``d1`` and ``d2`` are the second-order central first and second
differences; arrays may carry component axes after the leading cell axis.

``solve_block_tridiag`` is a direct block-Thomas elimination for the block
tridiagonal systems produced by implicit Euler steps of the parabolic
blocks; with 1 x 1 blocks it degenerates to the scalar Thomas algorithm.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import GridError, LinearSolverError, UsageError

MIN_CELLS = 4


class BC(enum.Enum):
    NEUMANN_ZERO = "neumann_zero"
    DIRICHLET_ZERO = "dirichlet_zero"
    NONE = "none"


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid on [0, length] with n cells."""

    length: float
    n: int

    def __post_init__(self):
        if not self.length > 0.0:
            raise GridError("domain length must be positive")
        if self.n < MIN_CELLS:
            raise GridError(f"need at least {MIN_CELLS} cells, got {self.n}")

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.dx

    @property
    def faces(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.dx


def _ghosts(values: np.ndarray, bc: BC):
    """Left/right ghost-cell values for the requested boundary condition."""
    if bc is BC.NEUMANN_ZERO:
        return values[0], values[-1]
    if bc is BC.DIRICHLET_ZERO:
        return -values[0], -values[-1]
    raise UsageError(f"no ghost rule for bc {bc}")


def d1(values, grid: Grid1D, bc: BC):
    """Second-order first difference along the cell axis (axis 0)."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != grid.n:
        raise UsageError("field length does not match the grid")
    out = np.empty_like(values)
    inv2dx = 1.0 / (2.0 * grid.dx)
    out[1:-1] = (values[2:] - values[:-2]) * inv2dx
    if bc is BC.NONE:
        # difference forms so constants are annihilated exactly
        out[0] = (4.0 * (values[1] - values[0])
                  - (values[2] - values[0])) * inv2dx
        out[-1] = (4.0 * (values[-1] - values[-2])
                   - (values[-1] - values[-3])) * inv2dx
    else:
        left, right = _ghosts(values, bc)
        out[0] = (values[1] - left) * inv2dx
        out[-1] = (right - values[-2]) * inv2dx
    return out


def d2(values, grid: Grid1D, bc: BC):
    """Second-order second difference along the cell axis (axis 0)."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != grid.n:
        raise UsageError("field length does not match the grid")
    out = np.empty_like(values)
    invdx2 = 1.0 / grid.dx**2
    out[1:-1] = (values[2:] - 2.0 * values[1:-1] + values[:-2]) * invdx2
    if bc is BC.NONE:
        # difference forms so constants are annihilated exactly
        out[0] = (-5.0 * (values[1] - values[0]) + 4.0 * (values[2] - values[0])
                  - (values[3] - values[0])) * invdx2
        out[-1] = (-5.0 * (values[-2] - values[-1])
                   + 4.0 * (values[-3] - values[-1])
                   - (values[-4] - values[-1])) * invdx2
    else:
        left, right = _ghosts(values, bc)
        out[0] = (values[1] - 2.0 * values[0] + left) * invdx2
        out[-1] = (right - 2.0 * values[-1] + values[-2]) * invdx2
    return out


def integrate(values, grid: Grid1D):
    """Midpoint-rule integral over the domain (sum of cell values times dx)."""
    return np.sum(np.asarray(values, dtype=float), axis=0) * grid.dx


def face_average(cell_values):
    """Arithmetic average onto interior faces; shape (n-1, ...)."""
    cell_values = np.asarray(cell_values, dtype=float)
    return 0.5 * (cell_values[:-1] + cell_values[1:])


def solve_block_tridiag(lower, diag, upper, rhs):
    """Direct block-Thomas solve of a block tridiagonal system.

    Row j couples blocks ``lower[j] x_{j-1} + diag[j] x_j + upper[j] x_{j+1}
    = rhs[j]`` (``lower[0]`` and ``upper[-1]`` are ignored).  Shapes:
    lower/diag/upper (n, m, m), rhs (n, m).  Raises ``LinearSolverError``
    naming the row on a singular pivot block.
    """
    diag = np.asarray(diag, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n, m = rhs.shape[0], rhs.shape[1] if rhs.ndim > 1 else 1
    if rhs.ndim == 1:
        rhs = rhs[:, None]
    for name, arr in (("lower", lower), ("diag", diag), ("upper", upper)):
        if arr.shape != (n, m, m):
            raise UsageError(f"{name} blocks must have shape ({n}, {m}, {m})")

    c_blocks = np.empty((n, m, m))
    z = np.empty((n, m))
    pivot = diag[0]
    try:
        c_blocks[0] = np.linalg.solve(pivot, upper[0])
        z[0] = np.linalg.solve(pivot, rhs[0])
    except np.linalg.LinAlgError:
        raise LinearSolverError("singular pivot block at row 0") from None
    for j in range(1, n):
        pivot = diag[j] - lower[j] @ c_blocks[j - 1]
        try:
            if j < n - 1:
                c_blocks[j] = np.linalg.solve(pivot, upper[j])
            z[j] = np.linalg.solve(pivot, rhs[j] - lower[j] @ z[j - 1])
        except np.linalg.LinAlgError:
            raise LinearSolverError(f"singular pivot block at row {j}") from None
    x = np.empty((n, m))
    x[-1] = z[-1]
    for j in range(n - 2, -1, -1):
        x[j] = z[j] - c_blocks[j] @ x[j + 1]
    return x
