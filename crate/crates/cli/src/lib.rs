//! Command-line orchestration for `mpirecon-core`: synthetic problems,
//! calibration ingest, whitening, rSVD compression, solves, α selection and
//! the timed STD / SNR / rSVD1 / rSVD2 comparison.

// `!(x > 0.0)` is the idiom used throughout to reject NaN along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod compare;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod problem;
pub mod timing;

pub use compare::{compare_methods, CompareReport};
pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
pub use pipeline::{run_pipeline, PipelineReport, RunOptions};
