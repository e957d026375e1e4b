"""Structure-preserving stochastic integrators for SDEs whose
coefficients split into a linear part and gradient parts.

The package provides exponential discrete-gradient one-step schemes
(general, Poisson, Langevin and oscillator variants), classical
baselines, reproducible coupled Brownian increments, structure
diagnostics, and Monte Carlo drivers for strong-convergence and
structure experiments. See README.md for a tour; the demos/ directory
holds narrative scripts for each capability.
"""

from .dgrad import DgConfig, ScalarField, coord_increment_dg, symmetric_dg
from .diagnostics import (
    StructureReport,
    conformal_residual,
    oscillator_h1,
    poisson_energy,
    shoelace_area,
    step_jacobian_fd,
    symplectic_matrix,
    triangle_area_track,
)
from .harness import (
    ConvergenceTable,
    ExperimentConfig,
    GrowthReport,
    SweepTable,
    expectation_growth,
    fit_loglog,
    frequency_sweep,
    simulate_path,
    strong_order,
)
from .integrators import (
    FixedPointConfig,
    FixedPointError,
    StepScheme,
    euler_maruyama_step,
    fixed_point_solve,
    make_scheme,
    milstein_step,
    oscillator_step_jacobian,
    sedg_langevin_step,
    sedg_oscillator_step,
    sedg_poisson_step,
    sedg_step,
    sem_step,
)
from .linalg import expm, expm_2x2_batch, phi1_times_h
from .models import (
    LangevinLgModel,
    LgSdeModel,
    PoissonLgModel,
    Scalar1D,
    build_model,
    ito_drift,
    make_damped_oscillator,
    make_nonlinear_oscillator,
    make_oscillator,
    make_wind_poisson,
)
from .wiener import (
    IncrementGrid,
    TruncationPolicy,
    aggregate,
    generate,
    truncate_increment,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
