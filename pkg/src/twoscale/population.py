"""Subpopulation measures, the interaction table and the simulation state."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math
from typing import Iterator, Mapping, Union

import numpy as np

from .grid import Grid, Rect, overlap_area
from .kernels import Anisotropy, InteractionKernel

MERGE_GUARD = 1e-9


class SimulationError(RuntimeError):
    """Base class for failures that abort a run."""


class MergeGuardError(SimulationError):
    pass


@dataclass(frozen=True)
class DiscreteMeasure:
    """Point masses of equal weight ``weight`` at ``centers`` (shape ``(N, 2)``).

    ``ids`` keeps particle labels stable when particles are dropped after
    leaving the domain in permissive runs.
    """

    weight: float
    centers: np.ndarray
    ids: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise ValueError(f"particle weight must be positive, got {self.weight}")
        c = np.array(self.centers, dtype=np.float64).reshape(-1, 2)
        if not np.isfinite(c).all():
            raise ValueError("particle centers must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)
        ids = np.arange(len(c)) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != (len(c),):
            raise ValueError("ids must match the number of centers")
        ids.setflags(write=False)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.centers)


@dataclass(frozen=True)
class DensityField:
    """Piecewise-constant density (mass per unit area) on ``grid``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValueError(f"density shape {v.shape} does not match grid {self.grid.shape}")
        if not np.isfinite(v).all():
            raise ValueError("density contains non-finite values")
        if (v < 0).any():
            raise ValueError("density must be non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: Grid) -> DensityField:
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_block(cls, grid: Grid, block: Rect, rho: float) -> DensityField:
        """Uniform density ``rho`` on ``block``, area-weighted on partial cells."""
        vals = np.zeros(grid.shape)
        for j in range(grid.n_l):
            x0, x1 = j * grid.h_l, (j + 1) * grid.h_l
            if x1 <= block.x0 or x0 >= block.x1:
                continue
            for k in range(grid.n_w):
                cell = Rect(x0, k * grid.h_w, x1, (k + 1) * grid.h_w)
                a = overlap_area(cell, block)
                if a > 0:
                    vals[j, k] = rho * a / grid.cell_area
        return cls(grid, vals)

    def mass(self) -> float:
        return math.fsum(self.values.ravel()) * self.grid.cell_area


Measure = Union[DiscreteMeasure, DensityField]


@dataclass(frozen=True)
class Population:
    name: str
    measure: Measure
    v_des: tuple[float, float] = (0.0, 0.0)
    anisotropy: Anisotropy = field(default_factory=lambda: Anisotropy(1.0))

    def __post_init__(self) -> None:
        vx, vy = (float(c) for c in self.v_des)
        if not (math.isfinite(vx) and math.isfinite(vy)):
            raise ValueError("desired velocity must be finite")
        object.__setattr__(self, "v_des", (vx, vy))

    @property
    def is_discrete(self) -> bool:
        return isinstance(self.measure, DiscreteMeasure)

    @property
    def sigma(self) -> float:
        return self.anisotropy.sigma

    def with_measure(self, measure: Measure) -> Population:
        return replace(self, measure=measure)


class InteractionMatrix(Mapping[tuple[str, str], InteractionKernel]):
    """Kernel ``f^alpha_beta`` keyed by ``(observer, source)``.

    Missing pairs mean no interaction.
    """

    def __init__(self, entries: Mapping[tuple[str, str], InteractionKernel] | None = None):
        self._entries: dict[tuple[str, str], InteractionKernel] = dict(entries or {})

    def __getitem__(self, key: tuple[str, str]) -> InteractionKernel:
        return self._entries[key]

    def __iter__(self) -> Iterator[tuple[str, str]]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def kernel(self, observer: str, source: str) -> InteractionKernel | None:
        return self._entries.get((observer, source))

    def is_symmetric(self) -> bool:
        return all(self._entries.get((b, a)) == k for (a, b), k in self._entries.items())

    def __repr__(self) -> str:
        return f"InteractionMatrix({self._entries!r})"


@dataclass(frozen=True)
class SimState:
    populations: tuple[Population, ...]
    interactions: InteractionMatrix
    dt: float
    grid: Grid
    n: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "populations", tuple(self.populations))
        names = [p.name for p in self.populations]
        if len(set(names)) != len(names):
            raise ValueError(f"population names must be unique: {names}")
        for obs, src in self.interactions:
            if obs not in names or src not in names:
                raise ValueError(f"interaction ({obs!r}, {src!r}) references an unknown population")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError("dt must be positive")
        for p in self.populations:
            m = p.measure
            if isinstance(m, DensityField) and m.grid != self.grid:
                raise ValueError(f"population {p.name!r} lives on a different grid")
            if isinstance(m, DiscreteMeasure):
                c = m.centers
                if len(c) and not ((c > 0).all() and (c[:, 0] < self.grid.length).all()
                                   and (c[:, 1] < self.grid.width).all()):
                    raise ValueError(f"particles of {p.name!r} must lie strictly inside the domain")
        d = min_pairwise_distance(self)
        if d <= MERGE_GUARD:
            raise MergeGuardError(
                f"step {self.n}: particle centres {d:.3g} apart, within the merge guard {MERGE_GUARD:g}"
            )

    @property
    def t(self) -> float:
        return self.n * self.dt

    def population(self, name: str) -> Population:
        for p in self.populations:
            if p.name == name:
                return p
        raise KeyError(name)


def total_mass(p: Population | Measure) -> float:
    m = p.measure if isinstance(p, Population) else p
    if isinstance(m, DiscreteMeasure):
        return m.weight * len(m)
    return m.mass()


def min_pairwise_distance(s: SimState) -> float:
    """Smallest distance between any two particle centers of any populations."""
    pts = [p.measure.centers for p in s.populations if p.is_discrete]
    allc = np.concatenate(pts) if pts else np.zeros((0, 2))
    if len(allc) < 2:
        return math.inf
    d = allc[:, None, :] - allc[None, :, :]
    dist = np.hypot(d[..., 0], d[..., 1])
    iu = np.triu_indices(len(allc), k=1)
    return float(dist[iu].min())
