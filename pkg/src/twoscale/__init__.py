"""Two-scale crowd dynamics: particles and grid densities moved by one explicit scheme."""

from .grid import Grid, Rect, cell_of, midpoint, overlap_area, vertices
from .kernels import (
    Anisotropy,
    InteractionKernel,
    KernelKind,
    cos_angle,
    eval_anisotropy,
    eval_kernel,
    potential_from_kernel,
)
from .population import (
    DensityField,
    DiscreteMeasure,
    InteractionMatrix,
    MergeGuardError,
    Population,
    SimState,
    SimulationError,
    min_pairwise_distance,
    total_mass,
)
from .velocity import VelocityPlan, build_velocity_plan, midpoint_velocity, social_velocity_at
from .transport import BoundaryLossError, StepReport, advect_density, push_particles, step
from .diagnostics import (
    EntropyConfig,
    EntropyGateError,
    ShapeMetrics,
    entropy,
    entropy_monotonicity_audit,
    mc_overlap_oracle,
    predicted_empty_zone_radius,
    predicted_equilibrium_distance,
    shape_metrics,
)
from .scenarios import ScenarioConfig, build_state, load_config, preset, run

__all__ = [
    "Anisotropy", "BoundaryLossError", "DensityField", "DiscreteMeasure", "EntropyConfig",
    "EntropyGateError", "Grid", "InteractionKernel", "InteractionMatrix", "KernelKind",
    "MergeGuardError", "Population", "Rect", "ScenarioConfig", "ShapeMetrics", "SimState",
    "SimulationError", "StepReport", "VelocityPlan", "advect_density", "build_state",
    "build_velocity_plan", "cell_of", "cos_angle", "entropy", "entropy_monotonicity_audit",
    "eval_anisotropy", "eval_kernel", "load_config", "mc_overlap_oracle", "midpoint",
    "midpoint_velocity", "min_pairwise_distance", "overlap_area", "potential_from_kernel",
    "predicted_empty_zone_radius", "predicted_equilibrium_distance", "preset", "push_particles",
    "run", "shape_metrics", "social_velocity_at", "step", "total_mass", "vertices",
]
