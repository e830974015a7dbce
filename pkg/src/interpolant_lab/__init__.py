"""Numerical laboratory for ODE-based stochastic interpolants.

Closed-form Gaussian-mixture velocity fields, forward Euler / Heun
integrators on geometric step-size schedules, and total-variation
estimators for convergence-order experiments.
"""

from .interpolants import (
    GammaKind,
    GammaSchedule,
    InterpolantMode,
    InterpolantSpec,
    gamma_eval,
    interp_point,
)
from .schedules import Schedule, ScheduleKind, make_schedule, refine_schedule
from .mixtures import (
    GaussianComponent,
    GaussianMixture,
    PairMoments,
    gmm_logpdf,
    gmm_sample,
    isotropic_mixture,
    marginal_mixture,
    mixture_from_json,
    mixture_to_json,
    pair_moments,
)
from .fields import (
    ConstantField,
    LinearField,
    MixtureVelocityField,
    OracleEstimate,
    PerturbMode,
    VelocityEval,
    VelocityField,
    lipschitz_probe,
    oracle_velocity_mc,
    perturb_field,
    velocity,
)
from .solvers import (
    EULER,
    HEUN,
    IntegratorKind,
    PushedEnsemble,
    diffeo_check,
    euler_step,
    euler_step_jacobian,
    heun_step,
    heun_step_jacobian,
    integrate,
    push_ensemble,
    reference_solution,
)
from .metrics import (
    HistogramGrid,
    MetricKind,
    SlopeFit,
    TVEstimate,
    continuity_residual,
    default_grid,
    fit_loglog_slope,
    tv_density_ratio,
    tv_histogram,
)
from .presets import Task, make_task
from .config import ExperimentConfig

__version__ = "0.1.0"
