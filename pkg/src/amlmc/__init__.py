"""Antithetic multilevel Monte Carlo for functionals of empirical measures.

Estimates Phi(mu_T) for interacting-diffusion particle systems (and Phi(mu)
for i.i.d. sampling) with antithetic multilevel variance reduction, plus an
experiment harness that verifies the convergence and complexity rates.
"""

from .errors import (
    ConfigurationError,
    DataError,
    NumericalBlowupError,
    UnsupportedInstanceError,
)
from .measure import (
    EmpiricalMeasure,
    Functional,
    cos_mean,
    evaluate,
    get_functional,
    linear_mean,
    mix_with_atom,
    second_moment,
    square_mean,
    tree_mean,
    tree_sum,
    w2_1d,
    w2_exact_small,
)
from .models import (
    AnalyticReference,
    InitialLaw,
    ModelSpec,
    drift_eval,
    gaussian_law,
    get_model,
    kuramoto,
    mean_field_ou,
    point_mass,
)
from .paths import (
    CHANNEL_BROWNIAN,
    CHANNEL_INITIAL,
    IncrementTable,
    SeedKey,
    coarsen,
    draw_increments,
    draw_initials,
    gaussian_block,
)
from .simulate import (
    AntitheticTriple,
    CoupledPair,
    ParticleCloud,
    antithetic_triple_euler,
    antithetic_triple_exact,
    coupled_pair,
    euler_terminal,
    evolve_euler,
    exact_linear_terminal,
    exact_linear_terminal_given,
)
from .mlmc import (
    EstimatorReport,
    Level,
    LevelSchedule,
    LevelStats,
    manual_schedule,
    run_amlmc_iid,
    run_amlmc_particles_euler,
    run_amlmc_particles_exact,
    run_ensemble,
    run_mlmc_standard,
    schedule_from_epsilon,
    schedule_from_epsilon_exact,
)
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    RateFit,
    default_config,
    experiment_complexity,
    experiment_euler_strong,
    experiment_strong_poc,
    experiment_variance_decay,
    experiment_weak_error,
    fit_rate,
    load_config,
    run_estimate,
    run_experiment,
    write_result,
)

__version__ = "0.1.0"
