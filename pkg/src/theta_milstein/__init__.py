"""Theta-Milstein schemes for scalar-noise SDEs with one-sided Lipschitz drift.

The package provides the split-step (SSTM) and one-stage (STM) theta-Milstein
steppers with an implicit-stage resolvent, reproducible coupled Brownian
noise, and experiment engines measuring strong convergence order, moment
boundedness, and exponential mean-square stability, together with closed-form
evaluators for the decay rate and the linear test equation.
"""

from .analysis import (
    AmplificationCheck,
    ConvergenceReport,
    MomentBoundReport,
    RegionRow,
    RegionTable,
    StabilityReport,
    amplification_mc,
    bracket_linear_threshold,
    check_moment_bound,
    classify_linear_regime,
    estimate_ms_decay,
    estimate_strong_order,
    gamma_delta,
    gamma_delta_stability_max,
    linear_amplification,
    linear_region_scan,
    linear_second_moments,
    linear_stability_threshold,
)
from .errors import (
    ConfigError,
    ContractViolationError,
    DivergenceError,
    DomainError,
    GuardViolationError,
    MissingConstantError,
    NonConvergenceError,
    ReferenceFailureError,
    ThetaMilsteinError,
)
from .noise import (
    MomentReport,
    NoiseGrid,
    brownian_values,
    coarsen,
    gaussian_even_moment,
    generate,
    moment_check,
    normal_increments,
    read_binary,
    write_binary,
)
from .schemes import (
    DIVERGENCE_LIMIT,
    GuardPolicy,
    ImplicitSolverConfig,
    Scheme,
    SchemeConfig,
    Trajectory,
    implicit_solve,
    integrate,
    sstm_step,
    stm_step,
    trajectory_to_csv,
)
from .sde import (
    ProblemConstants,
    SdeProblem,
    ThresholdSet,
    builtin_problem,
    builtin_problem_names,
    check_monotone_condition,
    cubic_additive_problem,
    ginzburg_landau_problem,
    l1g,
    linear_problem,
    monotone_constants,
    numerical_jacobian,
    stepsize_thresholds,
)

__version__ = "0.1.0"
