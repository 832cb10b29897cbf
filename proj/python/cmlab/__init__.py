"""Numerical laboratory for multi-step consistency generation.

The heavy lifting lives in the compiled extension; this package re-exports
its surface.
"""

from ._core import (  # noqa: F401
    Approximator,
    BoundFormula,
    ConsistencyMap,
    GaussianMixture,
    GaussianPushforward,
    IntegratorConfig,
    OuTransition,
    Perturbation,
    Schedule,
    ScoreField,
    TrainGrid,
    build_schedule_nonsmooth,
    build_schedule_nonsmooth_time,
    build_schedule_smooth,
    build_schedule_smooth_time,
    gaussian_pushforward,
    kl_conditional_step,
    kl_gaussian,
    measure_cd_error,
    measure_score_error,
    multistep_sample,
    ou_transition,
    run_verify,
    solver_step_phi,
    theorem_rhs,
    train_distillation,
)

__version__ = "0.1.0"
