//! Linearized convergence analysis and parameter tuning.
//!
//! All matrices use the stacked ordering `p = (x, λ, μ)` of
//! [`PrimalDualPoint::stacked`](crate::model::PrimalDualPoint::stacked).

mod assumptions;
mod certify;
mod matrices;
mod stability;
mod tuning;

use thiserror::Error;

use crate::linalg::LinalgError;
use crate::local_nlp::LocalError;
use crate::model::ModelError;

pub use assumptions::{check_assumptions, AssumptionCheck, AssumptionReport};
pub use certify::{
    certify_basin, certify_rate, grad_phi_check, BasinCertificate, LyapunovData, RateCertificate,
};
pub use matrices::{
    assemble_a, assemble_m_n_d, gdd_metric, iteration_matrix, local_solutions_at, offset_jacobian,
    sosc_factor, stacked_mixing_matrix, AnalysisMatrices, GddMetric,
};
pub use stability::{
    convergence_constants, lyapunov_kronecker, lyapunov_smith, max_step_size, p_norm,
    solve_discrete_lyapunov, RateConstants, StepSizeBound,
};
pub use tuning::{min_gamma, min_rho, tune_beta, BetaChoice};

/// Largest system handled by the Lyapunov solver.
pub const LYAPUNOV_MAX_DIM: usize = 400;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Local(#[from] LocalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("matrix is not Schur stable (spectral radius {radius})")]
    NotSchurStable { radius: f64 },
    #[error("system of size {0} exceeds the Lyapunov solver limit")]
    TooLarge(usize),
    #[error("local KKT Jacobian M is singular at this point")]
    SingularM,
    #[error("no penalty up to {largest} makes the augmented Hessian positive definite")]
    NoGamma { largest: f64 },
    #[error("active set changed under perturbation of coordinate {coordinate}; reduce h")]
    ActiveSetChanged { coordinate: usize },
}
