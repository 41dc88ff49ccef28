"""Radial interaction laws, the anisotropy weight and their potentials.

A kernel value multiplies the unit vector pointing from the observer to the
source: negative values push the observer away (repulsion), positive values
pull it closer (attraction).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import math
from typing import Callable

import numpy as np


class KernelKind(str, Enum):
    ATTRACT_REPEL = "ar"
    REPEL_ONLY = "r"


@dataclass(frozen=True, slots=True)
class InteractionKernel:
    kind: KernelKind
    strength: float
    r_rep: float
    r_att: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if not (math.isfinite(self.strength) and self.strength >= 0):
            raise ValueError(f"kernel strength must be finite and >= 0, got {self.strength}")
        if not (math.isfinite(self.r_rep) and self.r_rep > 0):
            raise ValueError(f"repulsion radius must be positive, got {self.r_rep}")
        if self.kind is KernelKind.ATTRACT_REPEL:
            if self.r_att is None or not (self.r_rep < self.r_att < math.inf):
                raise ValueError(
                    f"attraction-repulsion kernel needs 0 < Rr < Ra, got Rr={self.r_rep}, Ra={self.r_att}"
                )
        elif self.r_att is not None:
            raise ValueError("repulsion-only kernel takes no attraction radius")

    @classmethod
    def attract_repel(cls, strength: float, r_rep: float, r_att: float) -> InteractionKernel:
        return cls(KernelKind.ATTRACT_REPEL, strength, r_rep, r_att)

    @classmethod
    def repel_only(cls, strength: float, r_rep: float) -> InteractionKernel:
        return cls(KernelKind.REPEL_ONLY, strength, r_rep)

    @property
    def support(self) -> float:
        """Radius beyond which the kernel and its potential vanish."""
        return self.r_att if self.kind is KernelKind.ATTRACT_REPEL else self.r_rep


@dataclass(frozen=True, slots=True)
class Anisotropy:
    sigma: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.sigma <= 1.0):
            raise ValueError(f"sigma must lie in [0, 1], got {self.sigma}")


def kernel_values(k: InteractionKernel, s: np.ndarray) -> np.ndarray:
    """Vectorised kernel evaluation; every entry of ``s`` must be positive."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s <= 0):
        raise ValueError("kernel evaluated at non-positive distance")
    out = np.zeros_like(s)
    near = s <= k.r_rep
    out[near] = k.strength * (1.0 - k.r_rep / s[near])
    if k.kind is KernelKind.ATTRACT_REPEL:
        mid = (~near) & (s <= k.r_att)
        c = -k.strength / (k.r_rep * (k.r_att - k.r_rep))
        sm = s[mid]
        out[mid] = c * (sm - k.r_rep) * (sm - k.r_att)
    return out


def eval_kernel(k: InteractionKernel, s: float) -> float:
    return float(kernel_values(k, np.array([s]))[0])


def anisotropy_weights(sigma: float, cos_theta: np.ndarray) -> np.ndarray:
    c = np.clip(np.asarray(cos_theta, dtype=np.float64), -1.0, 1.0)
    return sigma + (1.0 - sigma) * (1.0 + c) / 2.0


def eval_anisotropy(a: Anisotropy, cos_theta: float) -> float:
    return float(anisotropy_weights(a.sigma, np.array([cos_theta]))[0])


def cos_angle(x, y, v_des) -> float | None:
    """Cosine of the angle between ``y - x`` and ``v_des``.

    Returns ``None`` when ``v_des`` vanishes; callers then use weight 1.
    """
    dx = float(y[0]) - float(x[0])
    dy = float(y[1]) - float(x[1])
    dist = math.hypot(dx, dy)
    if dist == 0.0:
        raise ValueError("cos_angle needs distinct points")
    speed = math.hypot(float(v_des[0]), float(v_des[1]))
    if speed == 0.0:
        return None
    c = (dx * v_des[0] + dy * v_des[1]) / (dist * speed)
    return min(1.0, max(-1.0, c))


def directional_weights(
    sigma: float, v_des: tuple[float, float], dx: np.ndarray, dy: np.ndarray, dist: np.ndarray
) -> np.ndarray | float:
    """Anisotropy weight for displacement vectors observer -> source.

    Returns the scalar 1.0 when the weight is identically one (``sigma == 1``
    or zero desired velocity), which keeps the isotropic path free of extra
    rounding.
    """
    speed = math.hypot(v_des[0], v_des[1])
    if sigma == 1.0 or speed == 0.0:
        return 1.0
    cos_t = (dx * v_des[0] + dy * v_des[1]) / (dist * speed)
    return anisotropy_weights(sigma, cos_t)


def pair_terms(
    k: InteractionKernel,
    sigma: float,
    v_des: tuple[float, float],
    dx: np.ndarray,
    dy: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Vector contributions f(|d|) g(theta) d/|d| for displacements ``d``."""
    dist = np.hypot(dx, dy)
    f = kernel_values(k, dist)
    g = directional_weights(sigma, v_des, dx, dy, dist)
    scale = f * g / dist
    return scale * dx, scale * dy


def potential_from_kernel(k: InteractionKernel) -> Callable[[np.ndarray], np.ndarray]:
    """Radial potential ``W`` with ``W' = -f`` and ``W = 0`` outside the support.

    The returned callable accepts scalars or arrays of positive distances.
    """
    F, rr = k.strength, k.r_rep
    if k.kind is KernelKind.REPEL_ONLY:
        w_at_rr = 0.0
        ra = rr
    else:
        ra = k.r_att
        c = F / (rr * (ra - rr))
        # integral of f over (Rr, Ra)
        w_at_rr = c * (ra - rr) ** 3 / 6.0

    def outer(s: np.ndarray) -> np.ndarray:
        # W(s) = int_s^Ra f(t) dt on (Rr, Ra]
        c = F / (rr * (ra - rr))
        return c * (ra - s) ** 2 * (ra + 2.0 * s - 3.0 * rr) / 6.0

    def W(s):
        s_arr = np.asarray(s, dtype=np.float64)
        if np.any(s_arr <= 0):
            raise ValueError("potential evaluated at non-positive distance")
        out = np.zeros_like(s_arr)
        near = s_arr <= rr
        sn = s_arr[near]
        out[near] = w_at_rr + F * ((rr - sn) - rr * np.log(rr / sn))
        if k.kind is KernelKind.ATTRACT_REPEL:
            mid = (~near) & (s_arr <= ra)
            out[mid] = outer(s_arr[mid])
        if np.ndim(s) == 0:
            return float(out)
        return out

    return W
