//! Penalized spline M-estimation of the mean function of discretely sampled
//! functional data.
//!
//! The estimator minimizes
//!
//! ```text
//! L_n(f) = (1/n) sum_i (1/m_i) sum_j rho(Y_ij - f(T_ij)) + lambda int |f^(r)|^2
//! ```
//!
//! over splines of order `p` with `K` interior knots, for the square,
//! absolute and Huber losses.

pub mod banded;
pub mod basis;
pub mod cli;
pub mod data;
pub mod error;
pub mod kernel;
pub mod loss;
pub mod penalty;
pub mod quadrature;
pub mod select;
pub mod simulate;
pub mod solver;

pub use basis::{
    check_existence, design_matrix, eval_bsplines, make_knots, DesignMatrix, ExistenceCheck,
    KnotPlacement, KnotVector, SplineFunction,
};
pub use data::{LongData, Record};
pub use error::{Error, Result};
pub use kernel::{diagonalize, kernel_quadratic_form, kernel_value, sup_norm_ratio, Diagonalization};
pub use loss::LossSpec;
pub use penalty::{gram_matrix, penalty_matrix, PenaltyConfig};
pub use select::{gcv_score, select_lambda, GcvResult, LambdaGrid};
pub use simulate::{run_study, Estimator, MeanFunction, SimConfig, SimResult, Variate};
pub use solver::{fit_penalized, hat_trace, Backend, FitResult, Problem, SolverConfig};
