"""Entropy monitor, closed-form predictions, shape metrics and a sampling oracle."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math
from typing import Callable, Iterable

import numpy as np
from numpy.polynomial import Polynomial as Poly

from .grid import Grid, Rect
from .kernels import InteractionKernel, KernelKind, potential_from_kernel
from .population import DensityField, DiscreteMeasure, SimState
from .velocity import apply_stencil


class EntropyGateError(ValueError):
    """The entropy functional is undefined for this configuration."""


@dataclass(frozen=True)
class EntropyConfig:
    confinement: dict[str, tuple[float, float]]  # V(x) = a . x per population
    kernels: dict[tuple[str, str], InteractionKernel]
    valid: bool
    reason: str | None = None

    @classmethod
    def from_state(cls, state: SimState) -> EntropyConfig:
        reasons = []
        aniso = [p.name for p in state.populations if p.sigma != 1.0]
        if aniso:
            reasons.append(f"anisotropic perception (sigma != 1) in {aniso}")
        if not state.interactions.is_symmetric():
            reasons.append("interaction table is not symmetric")
        return cls(
            confinement={p.name: p.v_des for p in state.populations},
            kernels=dict(state.interactions.items()),
            valid=not reasons,
            reason="; ".join(reasons) or None,
        )

    def require_valid(self) -> None:
        if not self.valid:
            raise EntropyGateError(f"entropy undefined: {self.reason}")

    def potential(self, observer: str, source: str) -> Callable | None:
        k = self.kernels.get((observer, source))
        return None if k is None else _potential(k)


@lru_cache(maxsize=64)
def _potential(k: InteractionKernel):
    return potential_from_kernel(k)


@lru_cache(maxsize=64)
def radial_moment(k: InteractionKernel) -> Callable[[np.ndarray], np.ndarray]:
    """Closed form of ``P(rho) = int_0^rho W(r) r dr`` for the kernel's potential."""
    F, rr = k.strength, k.r_rep
    if k.kind is KernelKind.REPEL_ONLY:
        w0, ra, outer = 0.0, rr, None
    else:
        ra = k.r_att
        c = F / (rr * (ra - rr))
        w0 = c * (ra - rr) ** 3 / 6.0
        outer = (c / 6.0 * Poly([ra, -1.0]) ** 2 * Poly([ra - 3.0 * rr, 2.0]) * Poly([0.0, 1.0])).integ()

    def inner(p: np.ndarray) -> np.ndarray:
        out = np.zeros_like(p)
        m = p > 0
        q = p[m]
        out[m] = q * q / 2.0 * (w0 + F * rr + F * rr * np.log(q / rr)) - F * q**3 / 3.0 - F * rr * q * q / 4.0
        return out

    p_rr = float(inner(np.array([float(rr)]))[0])

    def P(rho):
        rho = np.asarray(rho, dtype=np.float64)
        out = inner(np.minimum(rho, rr))
        far = rho > rr
        if outer is None:
            out[far] = p_rr
        else:
            out[far] = p_rr + outer(np.minimum(rho[far], ra)) - outer(rr)
        return out

    return P


_THETA_NODES, _THETA_WEIGHTS = np.polynomial.legendre.leggauss(48)
_CELL_NODES = 12


def rect_potential_integral(k: InteractionKernel, px, py, rect: Rect) -> np.ndarray:
    """``int_rect W(|y - p|) dy`` for arrays of points ``p``.

    The rectangle is split into the signed triangles spanned by ``p`` and
    each edge; the radial part is integrated in closed form, the angular
    part by Gauss-Legendre.  Points on edges or corners are fine.
    """
    P = radial_moment(k)
    px = np.atleast_1d(np.asarray(px, dtype=np.float64))
    py = np.atleast_1d(np.asarray(py, dtype=np.float64))
    corners = [(rect.x0, rect.y0), (rect.x1, rect.y0), (rect.x1, rect.y1), (rect.x0, rect.y1)]
    total = np.zeros(px.shape)
    for (ax, ay), (bx, by) in zip(corners, corners[1:] + corners[:1]):
        length = math.hypot(bx - ax, by - ay)
        if length == 0:
            continue
        ux, uy = ax - px, ay - py
        vx, vy = bx - px, by - py
        cross = ux * vy - uy * vx
        sweep = np.arctan2(cross, ux * vx + uy * vy)
        dist = np.abs(cross) / length
        nx, ny = (by - ay) / length, -(bx - ax) / length
        side = np.where(ux * nx + uy * ny >= 0, 1.0, -1.0)
        foot = np.arctan2(side * ny, side * nx)
        theta = np.arctan2(uy, ux)[:, None] + sweep[:, None] * (_THETA_NODES[None, :] + 1.0) / 2.0
        ok = dist > 0
        rho = np.zeros(theta.shape)
        rho[ok] = dist[ok, None] / np.cos(theta[ok] - foot[ok, None])
        total += np.where(ok, (P(rho) @ _THETA_WEIGHTS) * sweep / 2.0, 0.0)
    return total


@lru_cache(maxsize=64)
def cell_pair_stencil(grid: Grid, k: InteractionKernel):
    """Weights ``(dj, dk, w)`` with ``w = (1/|E|) int_E int_E' W(|x - y|) dy dx``
    for a cell ``E`` and its translate ``E'`` by ``(dj h_L, dk h_W)``."""
    t, wt = np.polynomial.legendre.leggauss(_CELL_NODES)
    X, Y = np.meshgrid((t + 1) / 2 * grid.h_l, (t + 1) / 2 * grid.h_w, indexing="ij")
    weights = np.outer(wt, wt).ravel() / 4.0
    X, Y = X.ravel(), Y.ravel()
    rj = int(math.ceil(k.support / grid.h_l)) + 1
    rk = int(math.ceil(k.support / grid.h_w)) + 1
    entries = []
    for dj in range(-rj, rj + 1):
        for dk in range(-rk, rk + 1):
            rect = Rect(dj * grid.h_l, dk * grid.h_w, (dj + 1) * grid.h_l, (dk + 1) * grid.h_w)
            w = math.fsum(rect_potential_integral(k, X, Y, rect) * weights)
            if w != 0.0:
                entries.append((dj, dk, w))
    return tuple(entries)


def _point_vs_density(x, field: DensityField, k: InteractionKernel) -> float:
    """``int W(|y - x|) rho(y) dy`` for a piecewise-constant density."""
    g = field.grid
    jj, kk = np.nonzero(field.values > 0)
    if len(jj) == 0:
        return 0.0
    ox, oy = jj * g.h_l, kk * g.h_w
    reach = k.support + math.hypot(g.h_l, g.h_w)
    near = np.hypot(ox + 0.5 * g.h_l - x[0], oy + 0.5 * g.h_w - x[1]) < reach
    if not near.any():
        return 0.0
    # translate so every cell becomes the reference cell at the origin
    vals = rect_potential_integral(k, x[0] - ox[near], x[1] - oy[near], Rect(0.0, 0.0, g.h_l, g.h_w))
    return math.fsum(vals * field.values[jj[near], kk[near]])


def _point_vs_points(x, centers: np.ndarray, k: InteractionKernel) -> float:
    d = np.hypot(centers[:, 0] - x[0], centers[:, 1] - x[1])
    d = d[(d > 0) & (d < k.support)]
    return math.fsum(_potential(k)(d)) if len(d) else 0.0


def entropy_terms(state: SimState, cfg: EntropyConfig | None = None) -> dict[str, float]:
    """Per-population terms ``int (V^a + 1/2 sum_b W^a_b * mu^b) dmu^a``.

    Densities are taken as the piecewise-constant measures they represent
    and integrated exactly up to quadrature error far below the mesh error.
    Point-mass populations weigh linear terms by ``M`` and pair terms by
    ``M * M'``; a particle does not interact with itself.
    """
    cfg = EntropyConfig.from_state(state) if cfg is None else cfg
    cfg.require_valid()
    g = state.grid
    totals = {}
    for obs in state.populations:
        a = cfg.confinement.get(obs.name, obs.v_des)
        m = obs.measure
        if isinstance(m, DiscreteMeasure):
            terms = []
            for x in m.centers:
                pair = []
                for src in state.populations:
                    k = cfg.kernels.get((obs.name, src.name))
                    if k is None:
                        continue
                    sm = src.measure
                    if isinstance(sm, DiscreteMeasure):
                        pair.append(sm.weight * _point_vs_points(x, sm.centers, k))
                    else:
                        pair.append(_point_vs_density(x, sm, k))
                terms.append(m.weight * (a[0] * x[0] + a[1] * x[1] + 0.5 * math.fsum(pair)))
            totals[obs.name] = math.fsum(terms)
        else:
            xs, ys = g.midpoints()
            # V is linear, so its cell average is its midpoint value
            field = a[0] * xs + a[1] * ys
            for src in state.populations:
                k = cfg.kernels.get((obs.name, src.name))
                if k is None:
                    continue
                sm = src.measure
                if isinstance(sm, DiscreteMeasure):
                    conv = np.zeros(g.shape)
                    for cx, cy in sm.centers:
                        conv += sm.weight / g.cell_area * rect_potential_integral(
                            k, cx - xs.ravel() + 0.5 * g.h_l, cy - ys.ravel() + 0.5 * g.h_w,
                            Rect(0.0, 0.0, g.h_l, g.h_w),
                        ).reshape(g.shape)
                else:
                    st = cell_pair_stencil(g, k)
                    conv = apply_stencil(sm.values, st)[..., 0] if st else np.zeros(g.shape)
                field = field + 0.5 * conv
            totals[obs.name] = math.fsum((field * m.values).ravel()) * g.cell_area
    return totals


def entropy(state: SimState, cfg: EntropyConfig | None = None) -> float:
    """Total entropy: the sum of :func:`entropy_terms`."""
    return math.fsum(entropy_terms(state, cfg).values())


# Relative size of per-step entropy changes indistinguishable from roundoff.
ENTROPY_NOISE_RTOL = 1e-12


@dataclass(frozen=True)
class EntropyAudit:
    steps: int
    dt: float
    min_delta: float
    min_delta_half: float | None
    # changes smaller than this are floating-point noise in summing S
    noise_floor: float = 0.0

    def _deficit(self, delta: float) -> float:
        d = -delta
        return d if d > self.noise_floor else 0.0

    @property
    def deficit(self) -> float:
        return self._deficit(self.min_delta)

    @property
    def deficit_half(self) -> float | None:
        return None if self.min_delta_half is None else self._deficit(self.min_delta_half)

    @property
    def k_estimate(self) -> float:
        """Smallest ``K`` with ``min delta >= -K dt^2``."""
        return self.deficit / self.dt**2

    @property
    def halving_ok(self) -> bool | None:
        if self.deficit_half is None:
            return None
        return self.deficit_half * 2.0 <= self.deficit

    @property
    def shrink_factor(self) -> float | None:
        if self.deficit_half is None:
            return None
        if self.deficit_half == 0.0:
            return math.inf
        return self.deficit / self.deficit_half


def _min_delta(states: Iterable[SimState], cfg: EntropyConfig) -> tuple[float, int, float]:
    """Worst per-step change, number of steps and largest ``|S|`` seen."""
    prev = None
    worst = math.inf
    count = 0
    scale = 0.0
    for s in states:
        e = entropy(s, cfg)
        scale = max(scale, abs(e))
        if prev is not None:
            worst = min(worst, e - prev)
            count += 1
        prev = e
    return (0.0 if count == 0 else worst), count, scale


def half_step_min_delta(first: SimState, steps: int, cfg: EntropyConfig | None = None) -> float:
    """Worst per-step entropy change when ``first`` is re-run at half its time
    step for ``2 * steps`` steps (the same horizon)."""
    from .transport import step  # local import: transport does not need diagnostics

    cfg = EntropyConfig.from_state(first) if cfg is None else cfg
    s = SimState(first.populations, first.interactions, first.dt / 2.0, first.grid, 0)

    def rerun(s=s):
        yield s
        for _ in range(2 * steps):
            s, _ = step(s)
            yield s

    return _min_delta(rerun(), cfg)[0]


def entropy_monotonicity_audit(trace: Iterable[SimState], cfg: EntropyConfig | None = None,
                               *, halve: bool = True) -> EntropyAudit:
    """Worst per-step entropy change along ``trace``.

    With ``halve`` the trace's first state is re-run at half the time step
    over the same horizon so the scaling of any deficit can be checked.
    """
    trace = iter(trace)
    first = next(trace, None)
    if first is None:
        raise ValueError("empty trace")
    cfg = EntropyConfig.from_state(first) if cfg is None else cfg
    cfg.require_valid()

    def chain():
        yield first
        yield from trace

    worst, count, scale = _min_delta(chain(), cfg)
    worst_half = half_step_min_delta(first, count, cfg) if halve and count else None
    return EntropyAudit(count, first.dt, worst, worst_half, ENTROPY_NOISE_RTOL * max(1.0, scale))


def predicted_equilibrium_distance(strength: float, r_rep: float, speed: float) -> float:
    """Separation at which repulsion cancels two opposing desired velocities."""
    if not (strength > 0 and r_rep > 0 and speed >= 0):
        raise ValueError("need F > 0, R_r > 0, speed >= 0")
    return strength * r_rep / (speed + strength)


def predicted_empty_zone_radius(weight: float, strength: float, r_rep: float, speed: float) -> float:
    """Radius of the region a heavy intruder keeps clear in an opposing crowd."""
    if not (weight > 0 and strength > 0 and r_rep > 0 and speed >= 0):
        raise ValueError("need M > 0, F > 0, R_r > 0, speed >= 0")
    return weight * strength * r_rep / (2.0 * speed + weight * strength)


@dataclass(frozen=True)
class ShapeMetrics:
    centroid: tuple[float, float]
    lam_max: float
    lam_min: float
    front_gap: float | None = None

    @property
    def isotropy(self) -> float:
        return 1.0 if self.lam_max == 0 else self.lam_min / self.lam_max


def shape_metrics(field: DensityField, threshold: float = 0.0, probe=None, direction=None) -> ShapeMetrics:
    """Mass-weighted centroid and principal second moments of the cells with
    ``rho >= threshold``.

    With ``probe`` and ``direction`` also reports the front gap: the distance
    along ``direction`` from ``probe`` to the nearest selected midpoint lying
    ahead within half a cell of the ray (``inf`` when there is none).
    """
    if field.mass() <= 0:
        raise ValueError("shape metrics need positive mass")
    g = field.grid
    xs, ys = g.midpoints()
    sel = field.values >= threshold
    if threshold <= 0:
        sel &= field.values > 0
    w = field.values[sel]
    if w.sum() <= 0:
        raise ValueError("no cell reaches the threshold")
    px, py = xs[sel], ys[sel]
    tot = math.fsum(w)
    cx = math.fsum(w * px) / tot
    cy = math.fsum(w * py) / tot
    dx, dy = px - cx, py - cy
    cov = np.array([
        [math.fsum(w * dx * dx), math.fsum(w * dx * dy)],
        [math.fsum(w * dx * dy), math.fsum(w * dy * dy)],
    ]) / tot
    lam_min, lam_max = np.linalg.eigvalsh(cov)
    gap = None
    if probe is not None:
        if direction is None:
            raise ValueError("front gap needs a direction")
        u = np.asarray(direction, dtype=np.float64)
        u = u / np.hypot(*u)
        rx, ry = px - probe[0], py - probe[1]
        along = rx * u[0] + ry * u[1]
        across = np.abs(-rx * u[1] + ry * u[0])
        half = 0.5 * math.hypot(abs(u[1]) * g.h_l, abs(u[0]) * g.h_w)
        ahead = (along > 0) & (across <= half * (1 + 1e-12))
        gap = float(along[ahead].min()) if ahead.any() else math.inf
    return ShapeMetrics((cx, cy), float(max(lam_max, 0.0)), float(max(lam_min, 0.0)), gap)


def horizontal_oscillation(field: DensityField, threshold: float = 0.0) -> float:
    """Mean ``|rho[j+1,k] - rho[j,k]|`` over neighbour pairs along the first
    axis whose left cell is occupied (``rho > threshold``)."""
    v = field.values
    left, right = v[:-1], v[1:]
    occ = left > threshold
    if not occ.any():
        return 0.0
    diffs = np.abs(right - left)[occ]
    return math.fsum(diffs) / diffs.size


def mc_overlap_oracle(a: Rect, b: Rect, samples: int, rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Monte-Carlo estimate of ``area(a & b)`` and its standard error."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if a.area == 0:
        return 0.0, 0.0
    rng = np.random.default_rng() if rng is None else rng
    x = rng.uniform(a.x0, a.x1, samples)
    y = rng.uniform(a.y0, a.y1, samples)
    hits = np.count_nonzero((x >= b.x0) & (x <= b.x1) & (y >= b.y0) & (y <= b.y1))
    p = hits / samples
    return p * a.area, a.area * math.sqrt(p * (1.0 - p) / samples)
