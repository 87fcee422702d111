//! Low-rank matrix completion with nuclear-norm regularization.
//!
//! The main solver, MF-Global, alternates coordinate descent on the
//! factorized objective `f(WHᵀ) + λ/2 (‖W‖² + ‖H‖²)` with inexact proximal
//! gradient steps on the convex objective `f(X) + λ‖X‖_*`, where
//! `f(X) = ‖P_Ω(X − A)‖²_F`. The lifting steps let the iterates escape
//! stationary points of the factorized problem and settle the rank.
//!
//! Numerical code is generic over [`Scalar`]; the aliases at the crate root
//! fix it to `f64`.

// `!(x > 0)` style checks are used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod driver;
pub mod eigensolver;
pub mod error;
pub mod kernels;
pub mod mfsolver;
pub mod operator;
pub mod oracle;
pub mod persist;
pub mod proxlift;
pub mod scalar;

pub use data::{load_ratings, load_ratings_files, planted, Dataset, IdMap, Planted, RatingFormat};
pub use driver::{relative_objective, relative_rmse, solve_mf_global, solve_mf_only, solve_pg_baseline, IterationRecord, IterationTrace, StopReason};
pub use eigensolver::EigMethod;
pub use error::{Error, Result};
pub use proxlift::{BbRule, CertifyMode};
pub use scalar::Scalar;

pub type Observations = data::ObservationSet<f64>;
pub type Split = data::EvalSplit<f64>;
pub type Triplet = kernels::SvdTriplet<f64>;
pub type Factors = operator::FactorPair<f64>;
pub type Config = driver::SolverConfig<f64>;
pub type Output = driver::SolveOutput<f64>;
pub type MfOnlyOutput = driver::MfOnlyOutput<f64>;
pub type ReferenceSolution = persist::Reference<f64>;
