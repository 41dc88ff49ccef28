"""Total velocity (desired + social) at particles and at cell midpoints.

Source integrals are evaluated per source type:

* point masses seen from a point: exact sum, skipping coincident centres;
* a density seen from a point: four-vertex trapezoid rule per cell, or the
  single-midpoint rule for a cell having the point on one of its vertices;
* point masses seen from a cell midpoint: exact sum, except that a centre
  sitting on the midpoint is replaced by its average interaction with the
  four cell vertices;
* a density seen from a cell midpoint: four-vertex trapezoid rule, applied
  as a fixed stencil since the grid is uniform.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np

from .grid import Grid
from .kernels import InteractionKernel, pair_terms
from .population import (
    DensityField,
    DiscreteMeasure,
    Population,
    SimState,
    SimulationError,
)

VERTEX_TOL = 1e-9  # relative to min(h_L, h_W)
DISTANCE_FLOOR = 1e-12

_CORNERS = ((-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5))


class NonFiniteVelocityError(SimulationError):
    pass


@dataclass(frozen=True)
class VelocityPlan:
    """Velocities computed from one state: ``(N, 2)`` per particle population,
    ``(n_L, n_W, 2)`` per density population."""

    particles: dict[str, np.ndarray]
    cells: dict[str, np.ndarray]

    def max_speed(self, state: SimState) -> float:
        speeds = [0.0]
        for name, v in self.particles.items():
            if len(v):
                speeds.append(float(np.hypot(v[:, 0], v[:, 1]).max()))
        for name, v in self.cells.items():
            occupied = state.population(name).measure.values > 0
            if occupied.any():
                speeds.append(float(np.hypot(v[..., 0], v[..., 1])[occupied].max()))
        return max(speeds)


def vertex_tolerance(grid: Grid) -> float:
    return VERTEX_TOL * min(grid.h_l, grid.h_w)


def _fsum2(cx: np.ndarray, cy: np.ndarray) -> np.ndarray:
    # correctly rounded sums: independent of summation order and array layout
    return np.array([math.fsum(cx.ravel()), math.fsum(cy.ravel())])


def _from_points(x, centers: np.ndarray, weight: float, k: InteractionKernel,
                 sigma: float, v_des) -> np.ndarray:
    """Point masses seen from point ``x``; coincident centres are skipped."""
    d = centers - np.asarray(x, dtype=np.float64)
    dist = np.hypot(d[:, 0], d[:, 1])
    keep = dist > 0.0
    if np.any(dist[keep] < DISTANCE_FLOOR):
        raise NonFiniteVelocityError(
            f"point masses closer than {DISTANCE_FLOOR:g} to {tuple(x)} (merge guard violated upstream)"
        )
    keep &= dist < k.support
    if not keep.any():
        return np.zeros(2)
    cx, cy = pair_terms(k, sigma, v_des, d[keep, 0], d[keep, 1])
    return weight * _fsum2(cx, cy)


def _cell_window(grid: Grid, x: float, y: float, reach: float) -> tuple[slice, slice]:
    j0 = max(int(math.floor((x - reach) / grid.h_l)) - 1, 0)
    j1 = min(int(math.floor((x + reach) / grid.h_l)) + 2, grid.n_l)
    k0 = max(int(math.floor((y - reach) / grid.h_w)) - 1, 0)
    k1 = min(int(math.floor((y + reach) / grid.h_w)) + 2, grid.n_w)
    return slice(j0, max(j0, j1)), slice(k0, max(k0, k1))


def _from_density(x, field: DensityField, k: InteractionKernel, sigma: float, v_des) -> np.ndarray:
    """Density seen from point ``x`` by the vertex/midpoint cell rules."""
    g = field.grid
    px, py = float(x[0]), float(x[1])
    sj, sk = _cell_window(g, px, py, k.support)
    rho = field.values[sj, sk]
    jj, kk = np.nonzero(rho > 0)
    if len(jj) == 0:
        return np.zeros(2)
    rho_c = rho[jj, kk]
    jg = jj + sj.start  # 0-based global indices
    kg = kk + sk.start
    mx = (jg + 0.5) * g.h_l
    my = (kg + 0.5) * g.h_w
    vx = np.stack([mx + cx * g.h_l for cx, _ in _CORNERS], axis=1) - px
    vy = np.stack([my + cy * g.h_w for _, cy in _CORNERS], axis=1) - py
    vdist = np.hypot(vx, vy)
    on_vertex = (vdist <= vertex_tolerance(g)).any(axis=1)

    contrib_x = np.zeros(len(rho_c))
    contrib_y = np.zeros(len(rho_c))
    reg = ~on_vertex
    if reg.any():
        near = vdist[reg] < k.support
        tx = np.zeros(near.shape)
        ty = np.zeros(near.shape)
        if near.any():
            tx[near], ty[near] = pair_terms(k, sigma, v_des, vx[reg][near], vy[reg][near])
        quarter = g.cell_area / 4.0
        contrib_x[reg] = rho_c[reg] * quarter * (tx[:, 0] + tx[:, 1] + tx[:, 2] + tx[:, 3])
        contrib_y[reg] = rho_c[reg] * quarter * (ty[:, 0] + ty[:, 1] + ty[:, 2] + ty[:, 3])
    if on_vertex.any():
        dx = mx[on_vertex] - px
        dy = my[on_vertex] - py
        near = np.hypot(dx, dy) < k.support
        tx = np.zeros(len(dx))
        ty = np.zeros(len(dx))
        if near.any():
            tx[near], ty[near] = pair_terms(k, sigma, v_des, dx[near], dy[near])
        contrib_x[on_vertex] = rho_c[on_vertex] * g.cell_area * tx
        contrib_y[on_vertex] = rho_c[on_vertex] * g.cell_area * ty
    return _fsum2(contrib_x, contrib_y)


def _points_on_cells(grid: Grid, centers: np.ndarray, weight: float, k: InteractionKernel,
                     sigma: float, v_des) -> np.ndarray:
    """Point masses seen from every cell midpoint, as an ``(n_L, n_W, 2)`` array."""
    out = np.zeros(grid.shape + (2,))
    tol = vertex_tolerance(grid)
    for cx_, cy_ in centers:
        sj, sk = _cell_window(grid, cx_, cy_, k.support)
        mx = ((np.arange(sj.start, sj.stop) + 0.5) * grid.h_l)[:, None]
        my = ((np.arange(sk.start, sk.stop) + 0.5) * grid.h_w)[None, :]
        dx = np.broadcast_to(cx_ - mx, (len(mx), my.shape[1])).copy()
        dy = np.broadcast_to(cy_ - my, dx.shape).copy()
        dist = np.hypot(dx, dy)
        tx = np.zeros(dx.shape)
        ty = np.zeros(dx.shape)
        on_mid = dist <= tol
        near = (dist < k.support) & ~on_mid
        if near.any():
            tx[near], ty[near] = pair_terms(k, sigma, v_des, dx[near], dy[near])
        for a, b in zip(*np.nonzero(on_mid)):
            # centre on the midpoint: average over the four vertices as observers
            ax = np.array([cx_ - (mx[a, 0] + ox * grid.h_l) for ox, _ in _CORNERS])
            ay = np.array([cy_ - (my[0, b] + oy * grid.h_w) for _, oy in _CORNERS])
            ux, uy = pair_terms(k, sigma, v_des, ax, ay)
            tx[a, b] = (ux[0] + ux[1] + ux[2] + ux[3]) / 4.0
            ty[a, b] = (uy[0] + uy[1] + uy[2] + uy[3]) / 4.0
        out[sj, sk, 0] += weight * tx
        out[sj, sk, 1] += weight * ty
    return out


@lru_cache(maxsize=64)
def density_stencil(grid: Grid, k: InteractionKernel, sigma: float, v_des: tuple[float, float]):
    """Per-offset trapezoid weights for a density seen from cell midpoints.

    Returns a tuple of ``(dj, dk, wx, wy)`` such that the social velocity at
    cell ``(j, k)`` is the sum of ``rho[j+dj, k+dk] * (wx, wy)``.  Offsets
    whose weights vanish identically are dropped.
    """
    rj = int(math.ceil(k.support / grid.h_l + 0.5))
    rk = int(math.ceil(k.support / grid.h_w + 0.5))
    quarter = grid.cell_area / 4.0
    entries = []
    for dj in range(-rj, rj + 1):
        for dk in range(-rk, rk + 1):
            dx = np.array([(dj + ox) * grid.h_l for ox, _ in _CORNERS])
            dy = np.array([(dk + oy) * grid.h_w for _, oy in _CORNERS])
            near = np.hypot(dx, dy) < k.support
            if not near.any():
                continue
            tx = np.zeros(4)
            ty = np.zeros(4)
            tx[near], ty[near] = pair_terms(k, sigma, v_des, dx[near], dy[near])
            wx = quarter * (tx[0] + tx[1] + tx[2] + tx[3])
            wy = quarter * (ty[0] + ty[1] + ty[2] + ty[3])
            if wx != 0.0 or wy != 0.0:
                entries.append((dj, dk, wx, wy))
    return tuple(entries)


def apply_stencil(rho: np.ndarray, stencil) -> np.ndarray:
    """Accumulate ``sum rho[j+dj, k+dk] * w`` in the fixed stencil order.

    Source rows and columns outside the bounding box of ``rho != 0`` are
    skipped; they would only add zeros.
    """
    n_l, n_w = rho.shape
    ncomp = len(stencil[0]) - 2 if stencil else 2
    outs = [np.zeros((n_l, n_w)) for _ in range(ncomp)]
    rows = np.flatnonzero(rho.any(axis=1))
    cols = np.flatnonzero(rho.any(axis=0))
    if len(rows) == 0:
        return np.stack(outs, axis=-1)
    r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    buf = np.empty((n_l, n_w))
    for dj, dk, *w in stencil:
        # source rows s and destination rows s - dj, both inside the grid
        s0, s1 = max(r0, dj, 0), min(r1, n_l + dj, n_l)
        t0, t1 = max(c0, dk, 0), min(c1, n_w + dk, n_w)
        if s0 >= s1 or t0 >= t1:
            continue
        block = rho[s0:s1, t0:t1]
        dst = (slice(s0 - dj, s1 - dj), slice(t0 - dk, t1 - dk))
        tmp = buf[: s1 - s0, : t1 - t0]
        for out, wc in zip(outs, w):
            np.multiply(block, wc, out=tmp)
            out[dst] += tmp
    return np.stack(outs, axis=-1)


def _check_finite(v: np.ndarray, state: SimState, name: str) -> np.ndarray:
    if not np.isfinite(v).all():
        raise NonFiniteVelocityError(
            f"non-finite velocity for population {name!r} at step {state.n} (t={state.t:g})"
        )
    return v


def social_velocity_at(x, observer: str, state: SimState) -> np.ndarray:
    """Social velocity felt at point ``x`` by members of ``observer``."""
    obs = state.population(observer)
    total = np.zeros(2)
    for src in state.populations:
        k = state.interactions.kernel(observer, src.name)
        if k is None:
            continue
        m = src.measure
        if isinstance(m, DiscreteMeasure):
            total = total + _from_points(x, m.centers, m.weight, k, obs.sigma, obs.v_des)
        else:
            total = total + _from_density(x, m, k, obs.sigma, obs.v_des)
    return _check_finite(total, state, observer)


def midpoint_velocity(cell: tuple[int, int], observer: str, state: SimState) -> np.ndarray:
    """Total velocity of a density population at the midpoint of 1-based ``cell``."""
    obs = state.population(observer)
    if obs.is_discrete:
        raise ValueError(f"{observer!r} is not a density population")
    g = state.grid
    j, k = cell
    if not (1 <= j <= g.n_l and 1 <= k <= g.n_w):
        raise IndexError(f"cell {cell} outside the grid")
    y = ((j - 0.5) * g.h_l, (k - 0.5) * g.h_w)
    total = np.array(obs.v_des, dtype=np.float64)
    for src in state.populations:
        ker = state.interactions.kernel(observer, src.name)
        if ker is None:
            continue
        m = src.measure
        if isinstance(m, DiscreteMeasure):
            field = _points_on_cells(g, m.centers, m.weight, ker, obs.sigma, obs.v_des)
            total = total + field[j - 1, k - 1]
        else:
            total = total + _from_density(y, m, ker, obs.sigma, obs.v_des)
    return _check_finite(total, state, observer)


def _particle_velocities(pop: Population, state: SimState) -> np.ndarray:
    m = pop.measure
    out = np.empty((len(m), 2))
    for i, x in enumerate(m.centers):
        v = np.array(pop.v_des, dtype=np.float64)
        for src in state.populations:
            k = state.interactions.kernel(pop.name, src.name)
            if k is None:
                continue
            sm = src.measure
            if isinstance(sm, DiscreteMeasure):
                v = v + _from_points(x, sm.centers, sm.weight, k, pop.sigma, pop.v_des)
            else:
                v = v + _from_density(x, sm, k, pop.sigma, pop.v_des)
        out[i] = v
    return _check_finite(out, state, pop.name)


def _cell_velocities(pop: Population, state: SimState) -> np.ndarray:
    g = state.grid
    out = np.zeros(g.shape + (2,))
    out[..., 0] = pop.v_des[0]
    out[..., 1] = pop.v_des[1]
    for src in state.populations:
        k = state.interactions.kernel(pop.name, src.name)
        if k is None:
            continue
        sm = src.measure
        if isinstance(sm, DiscreteMeasure):
            out += _points_on_cells(g, sm.centers, sm.weight, k, pop.sigma, pop.v_des)
        else:
            stencil = density_stencil(g, k, pop.sigma, pop.v_des)
            if stencil:
                out += apply_stencil(sm.values, stencil)
    return _check_finite(out, state, pop.name)


def _population_velocity(pop: Population, state: SimState) -> np.ndarray:
    if pop.is_discrete:
        return _particle_velocities(pop, state)
    return _cell_velocities(pop, state)


def build_velocity_plan(state: SimState, workers: int = 1) -> VelocityPlan:
    """Velocities of every particle and every cell from the time-``n`` state.

    Each population's entries are reduced in a fixed source order, so the
    result does not depend on ``workers``.
    """
    pops = state.populations
    if workers > 1 and len(pops) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda p: _population_velocity(p, state), pops))
    else:
        results = [_population_velocity(p, state) for p in pops]
    particles, cells = {}, {}
    for p, v in zip(pops, results):
        (particles if p.is_discrete else cells)[p.name] = v
    return VelocityPlan(particles, cells)
