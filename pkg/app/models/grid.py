from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from app.core.exceptions import GridMismatchError, InvalidParameterError


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on [-L, L]^n storing interior nodes only.

    Boundary values are implicitly zero (homogeneous Dirichlet).
    """

    n: int
    L: float
    N: int

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.N + 1)

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def size(self) -> int:
        return self.N ** self.n

    @property
    def cell_volume(self) -> float:
        """Quadrature weight h^n of every interior node."""
        return self.h ** self.n

    @property
    def nodes(self) -> np.ndarray:
        """Per-axis node coordinates -L + (i+1)h, i = 0..N-1."""
        return -self.L + self.h * np.arange(1, self.N + 1, dtype=float)

    def mesh(self) -> Tuple[np.ndarray, ...]:
        """Coordinate arrays of shape ``self.shape``, one per axis."""
        return tuple(np.meshgrid(*([self.nodes] * self.n), indexing="ij"))

    def radius(self) -> np.ndarray:
        """|x| at every interior node."""
        return np.sqrt(sum(c ** 2 for c in self.mesh()))

    def points(self) -> np.ndarray:
        """Node coordinates as a (size, n) array in C order."""
        return np.stack([c.ravel() for c in self.mesh()], axis=1)

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.shape))

    def __str__(self) -> str:
        return f"Grid(n={self.n}, L={self.L:g}, N={self.N})"


@dataclass(frozen=True, eq=False)
class Field:
    """Real-valued grid function on the interior nodes of a Grid."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.size != self.grid.size:
            raise InvalidParameterError(
                f"Field has {values.size} samples, grid has {self.grid.size} nodes"
            )
        values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise InvalidParameterError("Field samples must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def require_grid(self, grid: Grid) -> None:
        if self.grid != grid:
            raise GridMismatchError(grid, self.grid)

    def _other_values(self, other: "Field") -> np.ndarray:
        other.require_grid(self.grid)
        return other.values

    def __add__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values + self._other_values(other))

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values - self._other_values(other))

    def scaled(self, factor: float) -> "Field":
        return Field(self.grid, factor * self.values)
