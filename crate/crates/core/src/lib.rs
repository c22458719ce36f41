//! Regularized online regression in vector-valued reproducing-kernel
//! feature spaces, with exact-expectation oracles and Monte-Carlo rate
//! experiments.
//!
//! The library has four layers:
//!
//! * [`hilbert`] — feature maps, operator kernels, the covariance spectrum
//!   and the smoothness-norm scale;
//! * [`online`] — the shrinkage/step-size schedules and the online
//!   iteration in spectral or kernel-expansion form;
//! * [`oracle`] — exact moment recursions for coefficient sampling and the
//!   expected-trajectory analysis, including the divergence witness;
//! * [`harness`] — problem generators, Monte-Carlo estimation, the
//!   certified error bounds and log-log rate fitting.
//!
//! Everything is deterministic given the seeds; trials parallelize without
//! affecting output bytes.

// Negated float comparisons (`!(x > 0.0)`) are used throughout validation
// so that NaN inputs fail the checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod hilbert;
mod numeric;
pub mod online;
pub mod oracle;

pub use error::{Error, Result};
