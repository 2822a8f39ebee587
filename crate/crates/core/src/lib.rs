//! Reconstruction toolkit for calibrated linear inverse problems of
//! magnetic particle imaging type.
//!
//! The pipeline: assemble a system matrix from calibration scans
//! ([`calib`]), whiten the noise ([`noise`]), optionally compress with a
//! randomized SVD ([`rsvd`]), solve a nonnegative Tikhonov problem
//! ([`kaczmarz`], [`direct`]) and pick the regularization parameter
//! ([`param`]).

// `!(x > 0.0)` is the idiom used throughout to reject NaN along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bound;
pub mod calib;
pub mod direct;
pub mod error;
pub mod io_formats;
pub mod kaczmarz;
pub mod linalg;
pub mod noise;
pub mod param;
pub mod result;
pub mod rsvd;
pub mod synth;
pub mod system;

pub use error::{Error, Result};
pub use io_formats::{Axis, VoxelGrid};
pub use kaczmarz::{kaczmarz_solve, KaczmarzConfig};
pub use linalg::Matrix;
pub use noise::{CovarianceModel, WhiteningOperator};
pub use param::{AlphaGrid, RuleOutcome};
pub use result::{ReconstructionResult, SolverTag};
pub use rsvd::{LowRankFactors, ReducedProblem};
pub use system::{Provenance, SystemMatrix};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
