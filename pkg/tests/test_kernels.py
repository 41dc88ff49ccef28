from __future__ import annotations

import math

from hypothesis import given, strategies as st
import numpy as np
import pytest

from twoscale.kernels import (
    Anisotropy,
    InteractionKernel,
    KernelKind,
    cos_angle,
    eval_anisotropy,
    eval_kernel,
    kernel_values,
    potential_from_kernel,
)

REP = InteractionKernel.repel_only(0.03, 4.0)
AR = InteractionKernel.attract_repel(0.03, 1.5, 3.0)


class TestConstruction:
    def test_kinds(self):
        assert REP.kind is KernelKind.REPEL_ONLY and REP.support == 4.0
        assert AR.kind is KernelKind.ATTRACT_REPEL and AR.support == 3.0
        assert InteractionKernel("ar", 1, 1, 2).kind is KernelKind.ATTRACT_REPEL

    @pytest.mark.parametrize("args", [
        ("ar", 0.03, 3.0, 1.5),
        ("ar", 0.03, 1.5, 1.5),
        ("ar", 0.03, 1.5, None),
        ("r", 0.03, 4.0, 5.0),
        ("r", -1.0, 4.0, None),
        ("r", 0.03, 0.0, None),
        ("r", math.nan, 1.0, None),
    ])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            InteractionKernel(*args)

    def test_anisotropy_range(self):
        for bad in (-0.1, 1.1):
            with pytest.raises(ValueError):
                Anisotropy(bad)


def test_kernel_examples():
    assert eval_kernel(REP, 4.0) == 0.0
    assert eval_kernel(REP, 2.0) == pytest.approx(-0.03, abs=1e-17)
    assert eval_kernel(AR, 2.25) == pytest.approx(0.0075, abs=1e-17)
    assert eval_kernel(AR, 5.0) == 0.0
    assert eval_kernel(REP, 10.0) == 0.0


def test_kernel_rejects_nonpositive_distance():
    with pytest.raises(ValueError):
        eval_kernel(REP, 0.0)


def test_anisotropy_examples():
    for sigma in (0.0, 0.3, 1.0):
        # straight ahead is always fully perceived, straight behind gets sigma
        assert eval_anisotropy(Anisotropy(sigma), 1.0) == 1.0
        assert eval_anisotropy(Anisotropy(sigma), -1.0) == sigma
    assert eval_anisotropy(Anisotropy(0.5), 0.0) == 0.75
    # tiny overshoot is clamped
    assert eval_anisotropy(Anisotropy(0.5), 1.0 + 1e-15) == 1.0


def test_cos_angle():
    assert cos_angle((0, 0), (2, 0), (1.34, 0)) == 1.0
    assert cos_angle((0, 0), (0, 3), (1.34, 0)) == 0.0
    assert cos_angle((1, 1), (0, 1), (1.34, 0)) == -1.0
    assert cos_angle((0, 0), (1, 1), (0, 0)) is None
    with pytest.raises(ValueError):
        cos_angle((1, 1), (1, 1), (1, 0))


def test_potential_examples():
    W = potential_from_kernel(REP)
    assert W(4.0) == 0.0
    assert W(5.0) == 0.0
    eps = 1e-5
    fd = (W(2.0 + eps) - W(2.0 - eps)) / (2 * eps)
    assert fd == pytest.approx(-eval_kernel(REP, 2.0), rel=1e-8)
    with pytest.raises(ValueError):
        W(0.0)


def test_potential_singular_at_origin():
    # W' = -f > 0 inside R_r, so W decreases without bound towards the origin
    W = potential_from_kernel(REP)
    vals = [W(10.0**-p) for p in range(1, 12)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < -0.5


def test_potential_closed_form_repel():
    # W(s) = F (R_r - s) - F R_r ln(R_r / s) for the repulsion-only law
    W = potential_from_kernel(REP)
    s = 1.3
    assert W(s) == pytest.approx(0.03 * (4 - s) - 0.03 * 4 * math.log(4 / s), rel=1e-14)


def test_potential_ar_continuity():
    W = potential_from_kernel(AR)
    for b in (1.5, 3.0):
        assert W(b - 1e-10) == pytest.approx(W(b + 1e-10), abs=1e-11)
    assert W(3.0) == 0.0
    assert W(np.array([1.0, 2.0])).shape == (2,)


def test_ar_differentiable_at_rr():
    h = 1e-6
    left = (eval_kernel(AR, 1.5) - eval_kernel(AR, 1.5 - h)) / h
    right = (eval_kernel(AR, 1.5 + h) - eval_kernel(AR, 1.5)) / h
    assert left == pytest.approx(right, abs=1e-6)
    assert left == pytest.approx(0.03 / 1.5, rel=1e-4)


def test_repel_continuous_at_rr():
    assert abs(eval_kernel(REP, 4.0 - 1e-12)) < 1e-13
    assert eval_kernel(REP, 4.0 + 1e-12) == 0.0


@pytest.mark.parametrize("k", [REP, AR, InteractionKernel.attract_repel(0.3, 1.5, 6.0)], ids=["r", "ar", "ar-wide"])
def test_potential_derivative_random(k):
    rng = np.random.default_rng(7)
    W = potential_from_kernel(k)
    s = rng.uniform(0.05, k.support, 1000)
    # stay clear of the kinks where one-sided derivatives differ
    s = s[np.all(np.abs(s[:, None] - np.array([k.r_rep, k.support])) > 1e-3, axis=1)]
    eps = 1e-6 * s
    fd = (W(s + eps) - W(s - eps)) / (2 * eps)
    f = kernel_values(k, s)
    scale = np.maximum(np.abs(f), k.strength * 1e-2)
    assert np.all(np.abs(fd + f) <= 1e-6 * scale)


@given(st.floats(0, 1), st.floats(-math.pi, math.pi))
def test_anisotropy_range_property(sigma, theta):
    g = eval_anisotropy(Anisotropy(sigma), math.cos(theta))
    assert sigma - 1e-15 <= g <= 1.0 + 1e-15
    assert g == eval_anisotropy(Anisotropy(sigma), math.cos(-theta))


@given(st.floats(1e-6, 10.0))
def test_potential_radial(s):
    W = potential_from_kernel(AR)
    assert W(s) == W(float(np.hypot(s, 0.0)))
    assert W(np.array([s]))[0] == W(s)
