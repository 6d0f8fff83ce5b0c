//! Weighted Poisson fitting: IRLS, spline penalties, LASSO, cross-validation,
//! Wald tests and multiple-imputation pooling.

mod cv;
mod fit;
mod glm;
mod lasso;
mod penalty;
mod wald;

pub use cv::{cross_validate, fold_assignment, quadratic_lambda_grid, CvFamily, CvResult};
pub use fit::{
    fit_poisson_weighted, fit_poisson_with, penalized_objective, Convergence, FitOptions, FitResult, FitStatus,
    Penalty, PenaltyKind, SEPARATION_THRESHOLD,
};
pub use glm::{poisson_deviance, poisson_information, poisson_log_likelihood, poisson_score};
pub use lasso::{fit_lasso, lambda_grid, lambda_max, LassoFit, LassoOptions, LassoPath};
pub use penalty::{design_penalty, gauss_legendre, penalty_matrix, surface_penalty_mask};
pub use wald::{rubin_combine, wald_tests, RubinResult, WaldTest};
