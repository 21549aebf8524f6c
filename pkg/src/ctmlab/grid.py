"""Uniform channel grid, cell-averaged scalar fields and their L2 algebra.

The domain is periodic in x and bounded by no-flux walls in y. Field values
are stored as ``(ny, nx)`` arrays whose first row is the southernmost one.
Every reduction walks the cells left to right, south to north, so repeated
evaluation is bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateReferenceError,
    DomainError,
    ResolutionError,
    ShapeError,
)


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    dx: float
    dy: float
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid needs at least 4x4 cells, got {self.nx}x{self.ny}")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError("cell sizes must be positive")

    @classmethod
    def from_extent(cls, nx, ny, lx, ly, x0=0.0, y0=0.0):
        return cls(int(nx), int(ny), lx / nx, ly / ny, x0, y0)

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def size(self):
        return self.nx * self.ny

    @property
    def lx(self):
        return self.nx * self.dx

    @property
    def ly(self):
        return self.ny * self.dy

    @property
    def cell_area(self):
        return self.dx * self.dy

    @property
    def xc(self):
        return self.x0 + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def yc(self):
        return self.y0 + (np.arange(self.ny) + 0.5) * self.dy

    @property
    def xf(self):
        """x coordinates of the nx+1 cell faces (first and last coincide periodically)."""
        return self.x0 + np.arange(self.nx + 1) * self.dx

    @property
    def yf(self):
        return self.y0 + np.arange(self.ny + 1) * self.dy


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.shape != self.grid.shape:
            raise ShapeError(f"values shape {arr.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("field values must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @classmethod
    def constant(cls, grid, value):
        return cls(grid, np.full(grid.shape, float(value)))

    def with_values(self, values):
        return ScalarField(self.grid, values)

    def __eq__(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class PlumeSpec:
    """Rectangular instantaneous release sitting on a constant background."""

    center: tuple
    side_x: float
    side_y: float
    background: float = 1.0
    excess_factor: float = 2.0

    def __post_init__(self):
        if not (self.side_x > 0 and self.side_y > 0):
            raise ValueError("plume sides must be positive")
        if not self.excess_factor > 1:
            raise ValueError(f"excess_factor must exceed 1, got {self.excess_factor}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def peak(self):
        return self.background * self.excess_factor

    @property
    def area(self):
        return self.side_x * self.side_y


def _require_same_grid(a, b):
    if a.grid != b.grid:
        raise ShapeError("fields live on different grids")


def ordered_sum(arr):
    """Sequential sum in row-major order (left to right, south to north)."""
    flat = np.ravel(arr)
    if flat.size == 0:
        return 0.0
    return float(np.cumsum(flat)[-1])


def plume_mask(grid, spec):
    """Boolean mask of cells whose centers fall strictly inside the plume rectangle."""
    cx, cy = spec.center
    hx, hy = 0.5 * spec.side_x, 0.5 * spec.side_y
    if cx - hx < grid.x0 or cx + hx > grid.x0 + grid.lx or cy - hy < grid.y0 or cy + hy > grid.y0 + grid.ly:
        raise DomainError("plume rectangle extends outside the domain")
    cols = np.abs(grid.xc - cx) < hx
    rows = np.abs(grid.yc - cy) < hy
    if cols.sum() < 2 or rows.sum() < 2:
        raise ResolutionError(
            f"plume covers {cols.sum()}x{rows.sum()} cells; at least 2 per side are needed"
        )
    return rows[:, None] & cols[None, :]


def make_plume(grid, spec):
    mask = plume_mask(grid, spec)
    return ScalarField(grid, np.where(mask, spec.peak, spec.background))


def inner_product(a, b):
    _require_same_grid(a, b)
    return ordered_sum(a.values * b.values * a.grid.dx * a.grid.dy)


def l2_norm(a):
    return float(np.sqrt(inner_product(a, a)))


def total_mass(c, background=0.0):
    """Excess mass above ``background``, counting only positive excess."""
    excess = np.maximum(c.values - background, 0.0)
    return ordered_sum(excess * c.grid.dx * c.grid.dy)


def rel_l2_error(estimate, truth, background):
    """Percent L2 error of ``estimate`` relative to the excess of ``truth`` over background."""
    _require_same_grid(estimate, truth)
    ref = l2_norm(truth.with_values(truth.values - background))
    if ref == 0.0:
        raise DegenerateReferenceError("truth has no excess over background")
    diff = l2_norm(estimate.with_values(estimate.values - truth.values))
    return 100.0 * diff / ref
