//! Density-of-states curves for symmetric block-diagonal-plus-low-rank
//! matrices and their quantized tensor-train (QTT) compression.
//!
//! The pipeline has three stages:
//!
//! * [`structured_matrix`] holds `A = blockdiag(B0, diag(D0)) + P Qᵀ`,
//!   its generators and the BDLR binary format.
//! * [`resolvent_trace`] and [`param_reduction`] evaluate traces of shifted
//!   resolvents of `A` directly through the Sherman–Morrison–Woodbury
//!   identity, one shift at a time or through a precomputed separated
//!   family. [`dos`] turns those traces (or eigenvalues) into broadened
//!   density-of-states curves on a cell-centered grid.
//! * [`qtt`] compresses length-`q^d` vectors into tensor trains, and
//!   [`tt_cross`] builds the same representation from a small number of
//!   adaptively chosen entries.
//!
//! The [`cli`] module backs the `qttdos` binary.

pub mod cli;
pub mod dos;
pub mod error;
pub mod linalg;
pub mod param_reduction;
pub mod qtt;
pub mod resolvent_trace;
pub mod structured_matrix;
pub mod tt_cross;

pub use param_reduction::SeparatedFamily;
pub use qtt::QttVector;
pub use tt_cross::{CrossOptions, CrossReport};
pub use resolvent_trace::{ShiftParams, TraceMethod, TraceResult};


pub use error::{Error, Result};
pub use num_complex::Complex64;



pub use structured_matrix::{BdlrMatrix, SpectrumProfile, SyntheticSpec};

