"""One explicit step: move particles along their velocities and remap densities."""

from __future__ import annotations

from dataclasses import dataclass
import math
import warnings

import numpy as np

from .grid import Grid
from .population import (
    DensityField,
    DiscreteMeasure,
    SimState,
    SimulationError,
    total_mass,
)
from .velocity import VelocityPlan, build_velocity_plan

# Lost mass below this fraction of a population's mass is treated as roundoff.
BOUNDARY_LOSS_RTOL = 1e-12


class BoundaryLossError(SimulationError):
    pass


class CFLAdvisory(RuntimeWarning):
    """Some mass moved farther than one cell in a step (allowed, but coarse)."""


@dataclass(frozen=True)
class PopulationReport:
    mass_before: float
    mass_after: float
    boundary_loss: float
    max_density: float


@dataclass(frozen=True)
class StepReport:
    step: int  # index of the state the step started from
    dt: float
    populations: dict[str, PopulationReport]
    cfl_advisory: bool
    lost_particles: tuple[tuple[str, int, float, float], ...] = ()


def push_particles(centers: np.ndarray, velocities: np.ndarray, dt: float) -> np.ndarray:
    """Explicit Euler move ``x + dt * v``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    centers = np.asarray(centers, dtype=np.float64)
    velocities = np.asarray(velocities, dtype=np.float64)
    if centers.shape != velocities.shape:
        raise ValueError(f"shape mismatch: {centers.shape} vs {velocities.shape}")
    return centers + dt * velocities


def _axis_overlaps(lo: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """For intervals ``[lo, lo+h]`` return the first covered column and the
    fractions of ``h`` falling into it and into the next one."""
    i0 = np.floor(lo / h)
    hi = lo + h
    first = np.minimum(hi, (i0 + 1) * h) - np.maximum(lo, i0 * h)
    second = np.minimum(hi, (i0 + 2) * h) - np.maximum(lo, (i0 + 1) * h)
    first = np.clip(first, 0.0, h) / h
    second = np.clip(second, 0.0, h) / h
    return i0.astype(np.int64), first, second


def advect_density(field: DensityField, velocities: np.ndarray, dt: float) -> tuple[DensityField, float]:
    """Translate every occupied cell by ``dt * v`` and redistribute its mass by
    exact overlap areas.  Returns the new field and the mass pushed out of the
    domain."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    g: Grid = field.grid
    velocities = np.asarray(velocities, dtype=np.float64)
    if velocities.shape != g.shape + (2,):
        raise ValueError(f"velocity array must have shape {g.shape + (2,)}")
    rho = field.values
    pp, qq = np.nonzero(rho > 0)  # row-major source order
    if len(pp) == 0:
        return DensityField.zeros(g), 0.0
    src = rho[pp, qq]
    x0 = pp * g.h_l + dt * velocities[pp, qq, 0]
    y0 = qq * g.h_w + dt * velocities[pp, qq, 1]
    ja, fx0, fx1 = _axis_overlaps(x0, g.h_l)
    ka, fy0, fy1 = _axis_overlaps(y0, g.h_w)

    # four candidate destinations per source, kept source-major
    dj = np.stack([ja, ja + 1, ja, ja + 1], axis=1)
    dk = np.stack([ka, ka, ka + 1, ka + 1], axis=1)
    w = np.stack([fx0 * fy0, fx1 * fy0, fx0 * fy1, fx1 * fy1], axis=1) * src[:, None]
    dj, dk, w = dj.ravel(), dk.ravel(), w.ravel()
    inside = (dj >= 0) & (dj < g.n_l) & (dk >= 0) & (dk < g.n_w)
    lost = math.fsum(w[~inside]) * g.cell_area
    flat = dj[inside] * g.n_w + dk[inside]
    new = np.bincount(flat, weights=w[inside], minlength=g.n_l * g.n_w).reshape(g.shape)
    return DensityField(g, new), lost


def _step_particles(state, pop, v, allow_boundary_loss):
    m: DiscreteMeasure = pop.measure
    new = push_particles(m.centers, v, state.dt)
    g = state.grid
    inside = (new[:, 0] > 0) & (new[:, 0] < g.length) & (new[:, 1] > 0) & (new[:, 1] < g.width)
    lost = tuple(
        (pop.name, int(m.ids[i]), float(new[i, 0]), float(new[i, 1]))
        for i in np.nonzero(~inside)[0]
    )
    if lost and not allow_boundary_loss:
        name, pid, x, y = lost[0]
        raise BoundaryLossError(
            f"step {state.n}: particle {pid} of population {name!r} left the domain at ({x!r}, {y!r})"
        )
    measure = DiscreteMeasure(m.weight, new[inside], m.ids[inside])
    return measure, lost


def step(state: SimState, *, allow_boundary_loss: bool = False, workers: int = 1,
         plan: VelocityPlan | None = None) -> tuple[SimState, StepReport]:
    """Advance ``state`` by one time step.

    Velocities come from the time-``n`` state only; every population is then
    moved with them.  Raises :class:`BoundaryLossError` when mass leaves the
    domain (unless allowed) and :class:`MergeGuardError` when two particle
    centres come within ``MERGE_GUARD`` of each other.
    """
    if plan is None:
        plan = build_velocity_plan(state, workers=workers)
    g = state.grid
    cfl = state.dt * plan.max_speed(state) > min(g.h_l, g.h_w)
    if cfl:
        # fixed text so the default warning filter reports it once per run site
        warnings.warn("dt * max|v| exceeds the cell size", CFLAdvisory, stacklevel=2)

    new_pops = []
    reports: dict[str, PopulationReport] = {}
    lost_particles: list = []
    for pop in state.populations:
        before = total_mass(pop)
        if pop.is_discrete:
            measure, lost = _step_particles(state, pop, plan.particles[pop.name], allow_boundary_loss)
            lost_particles.extend(lost)
            loss = pop.measure.weight * len(lost)
            peak = 0.0
        else:
            measure, loss = advect_density(pop.measure, plan.cells[pop.name], state.dt)
            if loss > BOUNDARY_LOSS_RTOL * before and not allow_boundary_loss:
                raise BoundaryLossError(
                    f"step {state.n}: population {pop.name!r} lost mass {loss:.6g} "
                    f"of {before:.6g} through the boundary"
                )
            peak = float(measure.values.max())
        reports[pop.name] = PopulationReport(before, total_mass(measure), loss, peak)
        new_pops.append(pop.with_measure(measure))

    # the constructor enforces the merge guard on the moved particles
    new_state = SimState(tuple(new_pops), state.interactions, state.dt, g, state.n + 1)
    return new_state, StepReport(state.n, state.dt, reports, cfl, tuple(lost_particles))
