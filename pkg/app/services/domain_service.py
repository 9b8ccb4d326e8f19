import logging
from typing import Tuple, Union

import numpy as np
from scipy import sparse

from app.core.exceptions import InvalidParameterError
from app.models.grid import Field, Grid

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

THETA_SLOPE_MAX = 1.5


def build_grid(n: int, L: float, N: int) -> Grid:
    """
    Build the interior-node grid of [-L, L]^n.

    Args:
        n: Spatial dimension (1 or 2)
        L: Truncation radius
        N: Interior points per axis

    Returns:
        Grid with spacing h = 2L/(N+1)

    Raises:
        InvalidParameterError: If any argument is out of range
    """
    problems = []
    if n not in (1, 2):
        problems.append(f"dimension must be 1 or 2, got {n}")
    if not L > 0:
        problems.append(f"truncation radius must be positive, got {L}")
    if N < 3:
        problems.append(f"need at least 3 interior points per axis, got {N}")
    if problems:
        raise InvalidParameterError("; ".join(problems))

    grid = Grid(n=int(n), L=float(L), N=int(N))
    logger.debug(f"Built {grid} with h={grid.h:g}")
    return grid


def laplacian_apply(grid: Grid, u: Field) -> Field:
    """
    Apply the second-order central-difference Laplacian with zero ghost values.

    Args:
        grid: Grid the operator acts on
        u: Field on that grid

    Returns:
        Delta_h u

    Raises:
        GridMismatchError: If u lives on another grid
    """
    u.require_grid(grid)
    padded = np.pad(u.values, 1)
    inner = (slice(1, -1),) * grid.n
    out = np.zeros(grid.shape)
    for axis in range(grid.n):
        lo = list(inner)
        hi = list(inner)
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        out += padded[tuple(lo)] - 2.0 * u.values + padded[tuple(hi)]
    return Field(grid, out / grid.h ** 2)


def second_difference_matrix(N: int, h: float) -> sparse.csr_matrix:
    """Tridiagonal 1D Dirichlet Laplacian (1, -2, 1)/h^2."""
    v = np.ones(N)
    return sparse.diags([v[:-1], -2.0 * v, v[:-1]], [-1, 0, 1], format="csr") / h ** 2


def laplacian_matrix(grid: Grid) -> sparse.csr_matrix:
    """Sparse Delta_h acting on C-ordered flattened fields."""
    T = second_difference_matrix(grid.N, grid.h)
    if grid.n == 1:
        return T
    identity = sparse.identity(grid.N, format="csr")
    return (sparse.kron(T, identity) + sparse.kron(identity, T)).tocsr()


def axis_eigenvalues(grid: Grid) -> np.ndarray:
    """Eigenvalues of -Delta_h along one axis, mode j = 1..N."""
    j = np.arange(1, grid.N + 1, dtype=float)
    return (2.0 / grid.h ** 2) * (1.0 - np.cos(np.pi * j / (grid.N + 1)))


def dirichlet_eigenpair(grid: Grid) -> Tuple[float, Field]:
    """
    First discrete Dirichlet eigenpair of -Delta_h.

    Returns:
        (mu_1h, e1) where mu_1h sums the per-axis value
        (2/h^2)(1 - cos(pi h/(2L))) and e1 has unit discrete L^2 norm.
    """
    mu_axis = (2.0 / grid.h ** 2) * (1.0 - np.cos(np.pi * grid.h / (2.0 * grid.L)))
    profile = np.sin(np.pi * np.arange(1, grid.N + 1) / (grid.N + 1))
    values = profile
    for _ in range(grid.n - 1):
        values = np.multiply.outer(values, profile)
    norm = np.sqrt(grid.cell_volume * np.sum(values ** 2))
    return grid.n * float(mu_axis), Field(grid, values / norm)


def cutoff_theta(s: ArrayLike) -> ArrayLike:
    """
    C^1 smoothstep cut-off: 0 on [0, 1], 1 on [2, inf), 3y^2 - 2y^3 with y = s - 1 between.

    |theta'| <= 3/2 everywhere.

    Raises:
        InvalidParameterError: If any s is negative
    """
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise InvalidParameterError("cutoff_theta needs s >= 0")
    y = np.clip(arr - 1.0, 0.0, 1.0)
    out = y * y * (3.0 - 2.0 * y)
    if np.ndim(s) == 0:
        return float(out)
    return out


def cutoff_theta_slope(s: ArrayLike) -> ArrayLike:
    """Derivative 6y(1 - y) of the smoothstep, zero outside (1, 2)."""
    arr = np.asarray(s, dtype=float)
    y = np.clip(arr - 1.0, 0.0, 1.0)
    out = 6.0 * y * (1.0 - y)
    if np.ndim(s) == 0:
        return float(out)
    return out
