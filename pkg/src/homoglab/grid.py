"""Uniform Cartesian grids on the unit box with Dirichlet boundary bookkeeping.

The domain is (0,1)^dim, dim in {2, 3}, discretized with n nodes per axis
(boundary included), mesh width h = 1/(n-1).  Fields are stored on interior
nodes only, in lexicographic (C) order, and represent functions that vanish
on the boundary.  The discrete Laplacian is the standard second-order
centered stencil (5-point in 2D, 7-point in 3D); all integrals use the
node-value quadrature with weight h^dim, so that ``inner_product`` is the
discrete L2 pairing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, GridMismatchError


@dataclass(frozen=True)
class Grid:
    """Uniform grid on the unit box; immutable and hashable."""

    dim: int
    n: int

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def m(self) -> int:
        """Interior nodes per axis."""
        return self.n - 2

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.m,) * self.dim

    @property
    def interior_count(self) -> int:
        return self.m**self.dim

    def axis_coordinates(self) -> np.ndarray:
        """Coordinates of interior nodes along one axis: h, 2h, ..., 1-h."""
        return np.arange(1, self.n - 1) * self.h

    def meshgrid(self) -> tuple[np.ndarray, ...]:
        """Interior node coordinates as dim arrays of shape ``self.shape``."""
        x = self.axis_coordinates()
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))


def build_grid(dim: int, n: int) -> Grid:
    if dim not in (2, 3):
        raise ConfigurationError(f"dim must be 2 or 3, got {dim}")
    if n < 3:
        raise ConfigurationError(f"n must be >= 3, got {n}")
    return Grid(dim=dim, n=n)


@dataclass
class GridFunction:
    """Real field on interior nodes, flat C-order array; zero on the boundary."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.grid.interior_count:
            raise GridMismatchError(
                f"values length {self.values.size} != interior count "
                f"{self.grid.interior_count}"
            )

    @classmethod
    def zeros(cls, grid: Grid) -> "GridFunction":
        return cls(grid, np.zeros(grid.interior_count))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "GridFunction":
        return cls(grid, np.full(grid.interior_count, float(value)))

    @classmethod
    def from_callable(cls, grid: Grid, fn) -> "GridFunction":
        """Evaluate fn(*coords) vectorized on interior nodes."""
        return cls(grid, fn(*grid.meshgrid()).ravel())

    def reshaped(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())


def check_same_grid(*fns: GridFunction) -> Grid:
    grid = fns[0].grid
    for f in fns[1:]:
        if f.grid != grid:
            raise GridMismatchError(f"grids differ: {f.grid} vs {grid}")
    return grid


def laplacian_stencil_apply(grid: Grid, arr: np.ndarray) -> np.ndarray:
    """Apply -Delta_h to an interior array (shape grid.shape); zero Dirichlet."""
    padded = np.pad(arr, 1)
    out = (2.0 * grid.dim) * arr.copy()
    for axis in range(grid.dim):
        lo = tuple(
            slice(0, -2) if a == axis else slice(1, -1) for a in range(grid.dim)
        )
        hi = tuple(
            slice(2, None) if a == axis else slice(1, -1) for a in range(grid.dim)
        )
        out -= padded[lo]
        out -= padded[hi]
    out /= grid.h**2
    return out


def laplacian_apply(grid: Grid, v: GridFunction) -> GridFunction:
    """w = -Delta_h v with homogeneous Dirichlet conditions."""
    if v.grid != grid:
        raise GridMismatchError("grid mismatch in laplacian_apply")
    return GridFunction(grid, laplacian_stencil_apply(grid, v.reshaped()).ravel())


def inner_product(v: GridFunction, w: GridFunction) -> float:
    """Discrete L2 pairing h^dim * sum(v_i w_i)."""
    grid = check_same_grid(v, w)
    return grid.h**grid.dim * float(np.dot(v.values, w.values))


def l2_norm(v: GridFunction) -> float:
    """sqrt(h^dim * sum v_i^2); satisfies l2_norm(v)^2 == inner_product(v, v)."""
    grid = v.grid
    return float(np.sqrt(grid.h**grid.dim) * np.linalg.norm(v.values))


def linf_norm(v: GridFunction) -> float:
    if v.values.size == 0:
        return 0.0
    return float(np.max(np.abs(v.values)))
