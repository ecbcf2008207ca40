"""Uniform tensor grids on the unit cube and fields living on them.

The unknowns of every problem in this package are the values of a function
at the interior nodes of a uniform grid on (0,1)^d with Dirichlet boundary,
so the grid carries the discrete inner product and all index bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["Grid", "Field", "Coefficient"]


@dataclass(frozen=True)
class Grid:
    """Uniform grid on (0,1)^d with N subintervals per axis.

    Only the (N-1)^d interior nodes carry unknowns; boundary values are
    pinned to zero throughout.
    """

    dim: int
    N: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.N < 2:
            raise ValueError(f"N must be at least 2, got {self.N}")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N - 1,) * self.dim

    @property
    def n_dof(self) -> int:
        return (self.N - 1) ** self.dim

    @property
    def weight(self) -> float:
        """Quadrature weight h^d of the discrete L2 inner product."""
        return self.h ** self.dim

    def axis_coords(self) -> np.ndarray:
        """Interior node coordinates along one axis, shape (N-1,)."""
        return np.arange(1, self.N) * self.h

    def interior_points(self) -> np.ndarray:
        """Coordinates of all interior nodes, shape (n_dof, d), C order."""
        axes = np.meshgrid(*([self.axis_coords()] * self.dim), indexing="ij")
        return np.stack([ax.ravel() for ax in axes], axis=-1)

    def field(self, values) -> "Field":
        return Field(self, np.asarray(values, dtype=float).ravel())

    def field_from(self, fn: Callable[[np.ndarray], np.ndarray]) -> "Field":
        """Sample a pointwise function fn(points) at the interior nodes."""
        return self.field(fn(self.interior_points()))

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.n_dof))

    def ones(self) -> "Field":
        return Field(self, np.ones(self.n_dof))

    def checkerboard(self) -> "Field":
        """Field with values (-1)^(n1+...+nd); rich in the top of the spectrum."""
        idx = np.indices(self.shape).sum(axis=0) + self.dim
        return Field(self, np.where(idx % 2 == 0, 1.0, -1.0).ravel())


@dataclass(frozen=True)
class Field:
    """Values at the interior nodes of a grid, flat C-ordered."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.shape != (self.grid.n_dof,):
            raise ValueError(
                f"field has {v.size} values, grid has {self.grid.n_dof} nodes")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", v)

    def as_array(self) -> np.ndarray:
        """View shaped like the grid, (N-1,)^d."""
        return self.values.reshape(self.grid.shape)

    def dot(self, other: "Field") -> float:
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        return self.grid.weight * float(self.values @ other.values)

    def norm(self) -> float:
        return float(np.sqrt(self.grid.weight) * np.linalg.norm(self.values))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def __add__(self, other: "Field") -> "Field":
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        return Field(self.grid, self.values - other.values)

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)

    def __mul__(self, scalar: float) -> "Field":
        return Field(self.grid, self.values * float(scalar))

    __rmul__ = __mul__


def inner_product(f: Field, g: Field) -> float:
    """Discrete L2 inner product h^d * sum_j f_j g_j."""
    return f.dot(g)


def norm(f: Field) -> float:
    return f.norm()


@dataclass(frozen=True)
class Coefficient:
    """Diffusion coefficient a(x), either constant or a pointwise callable.

    Callable coefficients must come with declared bounds; the bounds are
    checked against sampled values at assembly time.
    """

    fn: Callable[[np.ndarray], np.ndarray] | None
    value: float | None
    a_min: float
    a_max: float

    @classmethod
    def constant(cls, value: float) -> "Coefficient":
        value = float(value)
        if value <= 0:
            raise ValueError(f"coefficient must be positive, got {value}")
        return cls(fn=None, value=value, a_min=value, a_max=value)

    @classmethod
    def from_callable(cls, fn, a_min: float, a_max: float) -> "Coefficient":
        if not (0 < a_min <= a_max):
            raise ValueError(f"need 0 < a_min <= a_max, got [{a_min}, {a_max}]")
        return cls(fn=fn, value=None, a_min=float(a_min), a_max=float(a_max))

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if self.fn is None:
            return np.full(pts.shape[:-1], self.value)
        vals = np.asarray(self.fn(pts), dtype=float)
        return np.broadcast_to(vals, pts.shape[:-1]).copy()


__all__ += ["inner_product", "norm"]
