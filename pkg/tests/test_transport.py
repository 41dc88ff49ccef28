from __future__ import annotations

import math
import warnings

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

from oracles import polygon_remap_deposits
from twoscale.grid import Grid, Rect
from twoscale.kernels import InteractionKernel
from twoscale.population import (
    DensityField,
    DiscreteMeasure,
    InteractionMatrix,
    MergeGuardError,
    Population,
    SimState,
)
from twoscale.transport import (
    BoundaryLossError,
    CFLAdvisory,
    advect_density,
    push_particles,
    step,
)

G = Grid(50.0, 50.0, 50, 50)


def field(rect=(20, 20, 30, 30), rho=2.0, grid=G):
    return DensityField.from_block(grid, Rect(*rect), rho)


def uniform_v(vx, vy, grid=G):
    v = np.zeros(grid.shape + (2,))
    v[..., 0], v[..., 1] = vx, vy
    return v


def test_push_examples():
    c = np.array([[25.0, 25.0]])
    assert np.array_equal(push_particles(c, np.zeros((1, 2)), 0.01), c)
    moved = push_particles(c, np.array([[1.34, 0.0]]), 0.01)
    assert moved[0, 0] == pytest.approx(25.0134, abs=1e-15) and moved[0, 1] == 25.0
    with pytest.raises(ValueError):
        push_particles(c, np.zeros((2, 2)), 0.01)
    with pytest.raises(ValueError):
        push_particles(c, np.zeros((1, 2)), 0.0)


def test_particle_leaving_domain_is_fatal():
    s = SimState((Population("p", DiscreteMeasure(1.0, [[49.995, 25.0], [10.0, 10.0]]), (1.0, 0.0)),),
                 InteractionMatrix(), 0.01, G)
    with pytest.raises(BoundaryLossError, match=r"particle 0 .*'p'"):
        step(s)
    s2, rep = step(s, allow_boundary_loss=True)
    assert len(s2.population("p").measure) == 1
    assert list(s2.population("p").measure.ids) == [1]
    assert rep.lost_particles[0][:2] == ("p", 0)
    assert rep.populations["p"].boundary_loss == 1.0


def test_advect_zero_velocity_identity():
    f = field((20.3, 20.7, 29.1, 30.2))
    out, lost = advect_density(f, np.zeros(G.shape + (2,)), 0.01)
    assert np.array_equal(out.values, f.values) and lost == 0.0


def test_advect_whole_cell_shift():
    f = field()
    out, lost = advect_density(f, uniform_v(1.0 / 0.01, 0.0), 0.01)
    assert np.array_equal(out.values, np.roll(f.values, 1, axis=0))
    assert out.mass() == f.mass() and lost == 0.0


def test_advect_half_cell_split():
    f = field((20, 20, 21, 21), rho=2.0)
    out, _ = advect_density(f, uniform_v(0.5 / 0.01, 0.0), 0.01)
    assert out.values[20, 20] == 1.0 and out.values[21, 20] == 1.0  # half of rho = 2 each
    assert np.count_nonzero(out.values) == 2


def test_advect_multi_cell_jump():
    f = field((20, 20, 21, 21), rho=2.0)
    out, _ = advect_density(f, uniform_v(3.25, -2.5), 1.0)
    # source cell index (20, 20) lands on [23.25, 24.25] x [17.5, 18.5]
    expect = {(23, 17): 0.75, (24, 17): 0.25, (23, 18): 0.75, (24, 18): 0.25}
    for idx, val in expect.items():
        assert out.values[idx] == pytest.approx(val, rel=1e-14)
    assert np.count_nonzero(out.values) == 4
    assert out.mass() == f.mass()


def test_advect_reports_loss():
    f = field((0, 0, 2, 2))
    out, lost = advect_density(f, uniform_v(-0.5, 0.0), 1.0)
    assert lost == pytest.approx(2.0)
    assert out.mass() + lost == pytest.approx(f.mass(), rel=1e-15)


def test_advect_random_translations_conserve_mass():
    rng = np.random.default_rng(11)
    f = field((10, 10, 40, 40))
    vals = f.values * rng.uniform(0, 3, G.shape)
    f = DensityField(G, vals)
    v = rng.uniform(-4, 4, G.shape + (2,))
    out, lost = advect_density(f, v, 1.0)
    assert lost == 0.0
    assert out.mass() == pytest.approx(f.mass(), rel=1e-12)


def test_advect_matches_polygon_oracle_many_cells():
    g = Grid(10.0, 8.0, 20, 10)  # rectangular cells
    rng = np.random.default_rng(2)
    vals = np.zeros(g.shape)
    vals[6:14, 3:7] = rng.uniform(0.1, 3.0, (8, 4))
    v = rng.uniform(-2.0, 2.0, g.shape + (2,))
    out, lost = advect_density(DensityField(g, vals), v, 1.0)
    expect = np.zeros(g.shape)
    for p, q in zip(*np.nonzero(vals)):
        x0 = p * g.h_l + v[p, q, 0]
        y0 = q * g.h_w + v[p, q, 1]
        expect += vals[p, q] * polygon_remap_deposits((x0, y0, x0 + g.h_l, y0 + g.h_w), g.h_l, g.h_w, *g.shape)
    assert lost == 0.0
    assert np.max(np.abs(out.values - expect / g.cell_area)) <= 1e-12


def test_advect_deterministic():
    rng = np.random.default_rng(4)
    f = DensityField(G, field((10, 10, 40, 40)).values * rng.uniform(0, 2, G.shape))
    v = rng.normal(0, 1, G.shape + (2,))
    a, _ = advect_density(f, v, 0.37)
    b, _ = advect_density(f, v, 0.37)
    assert a.values.tobytes() == b.values.tobytes()


def _static_state():
    crowd = Population("c", field(), (0.0, 0.0))
    ind = Population("p", DiscreteMeasure(60.0, [[40.0, 25.0]]))
    return SimState((crowd, ind), InteractionMatrix(), 0.01, G)


def test_step_zero_motion_identity():
    s = _static_state()
    s2, rep = step(s)
    assert s2.n == 1 and s2.t == pytest.approx(0.01)
    assert np.array_equal(s2.population("c").measure.values, s.population("c").measure.values)
    assert np.array_equal(s2.population("p").measure.centers, s.population("p").measure.centers)
    assert not rep.cfl_advisory


def test_step_constant_velocity_100_steps():
    s = SimState((Population("p", DiscreteMeasure(1.0, [[25.0, 25.0]]), (1.34, 0.0)),),
                 InteractionMatrix(), 0.01, G)
    for _ in range(100):
        s, _ = step(s)
    assert s.population("p").measure.centers[0] == pytest.approx([26.34, 25.0], abs=1e-12)
    assert s.n == 100


def test_step_report_balances():
    ar = InteractionKernel.attract_repel(0.03, 1.5, 3.0)
    s = SimState((Population("c", field(), (0.7, 0.2)),), InteractionMatrix({("c", "c"): ar}), 0.5, G)
    for _ in range(5):
        s, rep = step(s)
        r = rep.populations["c"]
        assert r.mass_after + r.boundary_loss == pytest.approx(r.mass_before, rel=1e-12)
        assert r.max_density == s.population("c").measure.values.max()


def test_step_density_boundary_loss():
    s = SimState((Population("c", field((47, 20, 49.5, 22)), (1.0, 0.0)),), InteractionMatrix(), 1.0, G)
    with pytest.raises(BoundaryLossError, match="population 'c'"):
        step(s)
    s2, rep = step(s, allow_boundary_loss=True)
    # the last column (area 0.5 x 2 at rho = 2) leaves the domain
    assert rep.populations["c"].boundary_loss == pytest.approx(2.0)


def test_step_merge_guard():
    pts = [[20.0, 25.0], [20.5, 25.0]]
    s = SimState((Population("a", DiscreteMeasure(1.0, pts[:1]), (0.5, 0.0)),
                  Population("b", DiscreteMeasure(1.0, pts[1:]))), InteractionMatrix(), 1.0, G)
    with pytest.raises(MergeGuardError):
        step(s)


def test_step_cfl_advisory():
    s = SimState((Population("c", field(), (2.0, 0.0)),), InteractionMatrix(), 1.0, G)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        _, rep = step(s)
    assert rep.cfl_advisory
    assert any(issubclass(x.category, CFLAdvisory) for x in w)


@st.composite
def advect_cases(draw):
    nl = draw(st.integers(4, 30))
    nw = draw(st.integers(4, 30))
    g = Grid(draw(st.floats(1, 20)), draw(st.floats(1, 20)), nl, nw)
    vals = np.array(draw(st.lists(st.floats(0, 10), min_size=nl * nw, max_size=nl * nw))).reshape(nl, nw)
    seed = draw(st.integers(0, 2**32 - 1))
    scale = draw(st.floats(0, 5))
    v = np.random.default_rng(seed).normal(0, scale, (nl, nw, 2))
    return DensityField(g, vals), v, draw(st.floats(1e-3, 2.0))


@settings(max_examples=100, deadline=None)
@given(advect_cases())
def test_advect_positive_and_conservative(case):
    f, v, dt = case
    out, lost = advect_density(f, v, dt)
    assert (out.values >= 0).all()
    assert lost >= 0
    assert out.mass() + lost == pytest.approx(f.mass(), rel=1e-12, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(0.3, 3.0), st.floats(-3.5, 3.5), st.floats(-3.5, 3.5))
def test_single_cell_deposits_partition(hl, hw, sx, sy):
    g = Grid(10 * hl, 10 * hw, 10, 10)
    dx, dy = sx * hl, sy * hw
    vals = np.zeros(g.shape)
    vals[4, 5] = 1.0
    out, lost = advect_density(DensityField(g, vals), uniform_v(dx, dy, g), 1.0)
    assert lost == 0.0
    assert math.fsum(out.values.ravel()) == pytest.approx(1.0, rel=1e-12)
    assert np.count_nonzero(out.values) <= 4
