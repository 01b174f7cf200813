//! Benchmark harness for the nmsparse kernels: seeded layer generation,
//! single-layer sweeps, layer-sequence runs and report rendering.
//!
//! All costs are emulated instruction counts.

pub mod gen;
pub mod network;
pub mod report;
pub mod runner;
pub mod sweep;
pub mod weights_io;

use nmsparse::kernels::KernelError;
use nmsparse::sparse_format::FormatError;
use nmsparse::tiler::TilerError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A checked property of a result does not hold.
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Tiler(#[from] TilerError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
