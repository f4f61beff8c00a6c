"""Uniform 1D grids and finite differences of vector-valued grid functions.

Gradients live on cells, second differences on interior nodes.  Every
functional in the package uses the same midpoint rule: cell ``j`` is
evaluated at ``x_{j+1/2}`` with the nodal average ``(u_j + u_{j+1}) / 2``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Interval:
    a: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise GridError(f"interval endpoints must be finite, got [{self.a}, {self.b}]")
        if not self.a < self.b:
            raise GridError(f"need a < b, got [{self.a}, {self.b}]")

    @property
    def length(self) -> float:
        return self.b - self.a


@dataclass(frozen=True)
class Grid:
    interval: Interval
    n_cells: int
    nodes: np.ndarray = field(repr=False, compare=False)

    @property
    def h(self) -> float:
        return self.interval.length / self.n_cells

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])


def build_grid(interval: Interval, n_cells: int) -> Grid:
    if int(n_cells) != n_cells or n_cells < 2:
        raise GridError(f"n_cells must be an integer >= 2, got {n_cells}")
    n_cells = int(n_cells)
    a, b = interval.a, interval.b
    h = (b - a) / n_cells
    nodes = a + h * np.arange(n_cells + 1, dtype=float)
    nodes[-1] = b  # exact right endpoint
    nodes.setflags(write=False)
    return Grid(interval, n_cells, nodes)


@dataclass(frozen=True)
class AffineData:
    """Dirichlet data ``b(x) = anchor + slope * (x - a)``."""

    anchor: np.ndarray
    slope: np.ndarray

    def __post_init__(self):
        anchor = np.atleast_1d(np.asarray(self.anchor, dtype=float)).copy()
        slope = np.atleast_1d(np.asarray(self.slope, dtype=float)).copy()
        if anchor.shape != slope.shape or anchor.ndim != 1:
            raise GridError("anchor and slope must be N-vectors of equal length")
        if not (np.all(np.isfinite(anchor)) and np.all(np.isfinite(slope))):
            raise GridError("affine data must be finite")
        anchor.setflags(write=False)
        slope.setflags(write=False)
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "slope", slope)

    @property
    def dim(self) -> int:
        return self.anchor.shape[0]

    @classmethod
    def from_endpoints(cls, interval: Interval, left, right) -> "AffineData":
        left = np.atleast_1d(np.asarray(left, dtype=float))
        right = np.atleast_1d(np.asarray(right, dtype=float))
        return cls(left, (right - left) / interval.length)

    def __call__(self, x, a: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.anchor + np.multiply.outer(x - a, self.slope)


class GridFunction:
    """Nodal values of a map ``[a, b] -> R^N``; ``values`` has shape (n_cells + 1, N)."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        vals = np.array(values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] != grid.n_nodes:
            raise GridError(
                f"expected values of shape ({grid.n_nodes}, N), got {np.shape(values)}"
            )
        if not np.all(np.isfinite(vals)):
            raise GridError("grid function values must be finite")
        vals.setflags(write=False)
        self.grid = grid
        self.values = vals

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_callable(cls, grid: Grid, f: Callable) -> "GridFunction":
        return cls(grid, np.asarray(f(grid.nodes), dtype=float).reshape(grid.n_nodes, -1))

    @classmethod
    def affine(cls, grid: Grid, data: AffineData) -> "GridFunction":
        return cls(grid, data(grid.nodes, grid.interval.a))

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)

    def cell_average(self) -> np.ndarray:
        return 0.5 * (self.values[:-1] + self.values[1:])

    def __repr__(self):
        return f"GridFunction(n_cells={self.grid.n_cells}, dim={self.dim})"


def cell_gradient(u: GridFunction) -> np.ndarray:
    """Forward differences ``(u_{j+1} - u_j) / h``, one N-vector per cell."""
    return np.diff(u.values, axis=0) / u.grid.h


def centered_gradient(u: GridFunction) -> np.ndarray:
    """``(u_{i+1} - u_{i-1}) / 2h`` at interior nodes i = 1..n-1."""
    return (u.values[2:] - u.values[:-2]) / (2.0 * u.grid.h)


def second_difference(u: GridFunction, i: int, k: int = 1) -> np.ndarray:
    """Three-point quotient ``(u_{i+k} - 2u_i + u_{i-k}) / t^2`` with ``t = k h``."""
    n = u.grid.n_cells
    if k < 1 or i - k < 0 or i + k > n:
        raise GridError(f"stencil ({i - k}, {i}, {i + k}) outside grid with {n} cells")
    t = k * u.grid.h
    v = u.values
    return (v[i + k] - 2.0 * v[i] + v[i - k]) / (t * t)


def second_differences(u: GridFunction, k: int = 1) -> np.ndarray:
    """Vectorised :func:`second_difference` for all nodes i = k..n-k."""
    n = u.grid.n_cells
    if k < 1 or 2 * k > n:
        raise GridError(f"step k={k} leaves no valid stencil on {n} cells")
    t = k * u.grid.h
    v = u.values
    return (v[2 * k:] - 2.0 * v[k:n + 1 - k] + v[: n + 1 - 2 * k]) / (t * t)


def write_csv(path, u: GridFunction) -> None:
    path = Path(path)
    header = ["x"] + [f"u_{a + 1}" for a in range(u.dim)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, row in zip(u.grid.nodes, u.values):
            w.writerow([f"{x:.17g}"] + [f"{v:.17g}" for v in row])


def read_csv(path) -> GridFunction:
    """Read a grid function written by :func:`write_csv`; nodes must be uniform."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0].strip() != "x" or len(rows[0]) < 2:
        raise GridError(f"{path}: header must be 'x,u_1,...,u_N'")
    data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    if data.shape[0] < 3:
        raise GridError(f"{path}: need at least 3 nodes")
    x = data[:, 0]
    grid = build_grid(Interval(x[0], x[-1]), len(x) - 1)
    if not np.allclose(x, grid.nodes, rtol=0, atol=1e-12 * max(1.0, abs(x).max())):
        raise GridError(f"{path}: nodes are not uniform")
    return GridFunction(grid, data[:, 1:])
