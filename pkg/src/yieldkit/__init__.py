"""yieldkit: discovery of elasto-plastic yield surfaces and hardening laws
from full-field displacement and net reaction-force data.

The package covers the whole pipeline: a plane-stress FEM forward solver for
generating synthetic test data, noise injection and temporal denoising, and
the sparse-regression inverse solver that selects a parsimonious material
model from a Fourier mode library.
"""

from .material import (
    ElasticLaw,
    HistoryState,
    LodeCoords,
    MaterialParams,
    NonConvergenceError,
    StressState,
    check_admissible,
    check_convex,
    consistent_tangent,
    fourier_project,
    iso_hardening,
    lode_invariants,
    relative_stress,
    return_map,
    yield_derivatives,
    yield_radius,
    yield_value,
)

__version__ = "0.1.0"
