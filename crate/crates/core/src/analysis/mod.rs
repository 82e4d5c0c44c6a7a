//! Minimal-step analysis for domain invariance and Monte Carlo estimators
//! for expectations, exits and strong errors.

pub mod convergence;
pub mod minstep;
pub mod montecarlo;

pub use convergence::{
    fit_order, strong_error_curve, OrderFit, StrongErrorCurve, EXACT_ERROR_FLOOR,
};
pub use minstep::{
    alpha_of_epsilon, invariance_probability, min_step_em, min_step_nsem, min_step_numeric,
    min_step_numeric_in, ratio_curve, InvarianceBounds, MinStepResult, MinStepRoute, RatioRow,
};
pub use montecarlo::{
    exit_statistics, mc_expectation, nsem_linear_mean, steps_for, ExitStatistics,
    ExpectationSeries, IncrementBound, McEstimate, RunningStats,
};
