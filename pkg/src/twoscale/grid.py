"""Rectangular domain geometry.

Cells are addressed with 1-based ``(j, k)`` indices, ``j`` along the first
axis and ``k`` along the second, so cell ``(j, k)`` covers
``[(j-1) h_L, j h_L] x [(k-1) h_W, k h_W]``.  Arrays holding per-cell values
use shape ``(n_L, n_W)`` and are indexed ``[j-1, k-1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

Point = tuple[float, float]
CellIndex = tuple[int, int]


@dataclass(frozen=True, slots=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        if not (self.x0 <= self.x1 and self.y0 <= self.y1):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def translated(self, dx: float, dy: float) -> Rect:
        return Rect(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)


@dataclass(frozen=True, slots=True)
class Grid:
    """Uniform ``n_L x n_W`` subdivision of ``[0, L] x [0, W]``."""

    length: float
    width: float
    n_l: int
    n_w: int
    h_l: float = field(init=False)
    h_w: float = field(init=False)

    def __post_init__(self) -> None:
        if not (self.length > 0 and self.width > 0):
            raise ValueError("domain extents must be positive")
        if int(self.n_l) != self.n_l or int(self.n_w) != self.n_w:
            raise ValueError("cell counts must be integers")
        if self.n_l < 1 or self.n_w < 1:
            raise ValueError("cell counts must be at least 1")
        object.__setattr__(self, "n_l", int(self.n_l))
        object.__setattr__(self, "n_w", int(self.n_w))
        object.__setattr__(self, "h_l", self.length / self.n_l)
        object.__setattr__(self, "h_w", self.width / self.n_w)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_l, self.n_w)

    @property
    def cell_area(self) -> float:
        return self.h_l * self.h_w

    @property
    def domain(self) -> Rect:
        return Rect(0.0, 0.0, self.length, self.width)

    def contains(self, p: Point) -> bool:
        x, y = p
        return 0.0 <= x <= self.length and 0.0 <= y <= self.width

    def strictly_inside(self, p: Point) -> bool:
        x, y = p
        return 0.0 < x < self.length and 0.0 < y < self.width

    def _check(self, idx: CellIndex) -> None:
        j, k = idx
        if not (1 <= j <= self.n_l and 1 <= k <= self.n_w):
            raise IndexError(f"cell {idx} outside 1..{self.n_l} x 1..{self.n_w}")

    def cell_rect(self, idx: CellIndex) -> Rect:
        self._check(idx)
        j, k = idx
        return Rect((j - 1) * self.h_l, (k - 1) * self.h_w, j * self.h_l, k * self.h_w)

    def midpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Midpoint coordinates of every cell as two ``(n_L, n_W)`` arrays."""
        xs = (np.arange(1, self.n_l + 1) - 0.5) * self.h_l
        ys = (np.arange(1, self.n_w + 1) - 0.5) * self.h_w
        return np.meshgrid(xs, ys, indexing="ij")


def cell_of(grid: Grid, p: Point) -> CellIndex | None:
    """Cell containing ``p`` or ``None`` when ``p`` lies outside the domain.

    Cells are half-open ``[lo, hi)``; the top and right domain edges belong to
    the last cell so that the closed domain is fully covered.
    """
    x, y = float(p[0]), float(p[1])
    if not grid.contains((x, y)):
        return None
    j = min(int(math.floor(x / grid.h_l)) + 1, grid.n_l)
    k = min(int(math.floor(y / grid.h_w)) + 1, grid.n_w)
    return (j, k)


def midpoint(grid: Grid, idx: CellIndex) -> Point:
    grid._check(idx)
    j, k = idx
    return ((j - 0.5) * grid.h_l, (k - 0.5) * grid.h_w)


def vertices(grid: Grid, idx: CellIndex) -> tuple[Point, Point, Point, Point]:
    """Corners ordered min-min, max-min, min-max, max-max."""
    r = grid.cell_rect(idx)
    return ((r.x0, r.y0), (r.x1, r.y0), (r.x0, r.y1), (r.x1, r.y1))


def overlap_area(a: Rect, b: Rect) -> float:
    w = min(a.x1, b.x1) - max(a.x0, b.x0)
    h = min(a.y1, b.y1) - max(a.y0, b.y0)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h
