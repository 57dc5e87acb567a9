"""Constructal architecture selection as an autonomous Filippov inclusion.

Subpackages: :mod:`constructal.hierarchy` (closed-form area-to-point
resistance model), :mod:`constructal.cones` (box cones and Moreau
decomposition), :mod:`constructal.dynamics` (sign-descent and projected
gradient integration with sliding and events), :mod:`constructal.analysis`
(contraction certificates, dissipation reports, search oracles) and
:mod:`constructal.cli` (batch subcommands).
"""

from .cones import Box, clarke_directional, kkt_residual, moreau_decompose, sign_set, tangent_project
from .dynamics import (
    IntegrationOptions,
    ProjectedGradient,
    SignDescent,
    Trajectory,
    integrate,
    integrate_ensemble,
    step,
    two_trajectory_run,
    velocity,
)
from .hierarchy import (
    ArchState,
    AssemblyConfig,
    TransportCosts,
    derive_geometry,
    grad_resistance,
    imbalance,
    optimal_branching,
    optimal_ratios,
    optimum_state,
    resistance,
    state_box,
)

__version__ = "0.1.0"

__all__ = [
    "ArchState",
    "AssemblyConfig",
    "Box",
    "IntegrationOptions",
    "ProjectedGradient",
    "SignDescent",
    "Trajectory",
    "TransportCosts",
    "clarke_directional",
    "derive_geometry",
    "grad_resistance",
    "imbalance",
    "integrate",
    "integrate_ensemble",
    "kkt_residual",
    "moreau_decompose",
    "optimal_branching",
    "optimal_ratios",
    "optimum_state",
    "resistance",
    "sign_set",
    "state_box",
    "step",
    "tangent_project",
    "two_trajectory_run",
    "velocity",
]
